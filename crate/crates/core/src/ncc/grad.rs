//! Analytic partial derivatives of correlogram entries with respect to
//! template and source pixels, from differentiating the Pearson quotient.
//!
//! For a placement with centered template t', centered window w',
//! numerator num = sum(t'w'), and squared-deviation sums sst and ssw:
//!
//!   dr/dT_j = (w'_j - (num/sst) t'_j) / sqrt(sst * ssw)
//!   dr/dS_j = (t'_j - (num/ssw) w'_j) / sqrt(sst * ssw)
//!
//! with dr/dS zero outside the window. Zero-variance placements follow
//! the r = 0 convention: the gradient is all-zero and flagged.

use crate::{Error, Plane, Raster, Result};

use super::{center, check_dims, VARIANCE_FLOOR};

/// Gradients of one correlogram entry with respect to every input pixel.
#[derive(Debug, Clone)]
pub struct PeakGradient {
    pub location: (usize, usize),
    /// Template-shaped d r / d template.
    pub grad_template: Plane,
    /// Source-shaped d r / d source; zero outside the window at `location`.
    pub grad_source: Plane,
    /// True when the zero-variance convention forced a zero gradient.
    pub zero_variance: bool,
}

/// Exact gradients of r at the given correlogram locations.
pub fn ncc_peak_gradients(
    template: &Raster,
    source: &Raster,
    locations: &[(usize, usize)],
) -> Result<Vec<PeakGradient>> {
    let t = Plane::from_raster(template);
    let s = Plane::from_raster(source);
    locations
        .iter()
        .map(|&loc| peak_gradient_plane(&t, &s, loc))
        .collect()
}

/// Gradient of the correlogram entry at `location` for f64 inputs.
pub fn peak_gradient_plane(
    template: &Plane,
    source: &Plane,
    location: (usize, usize),
) -> Result<PeakGradient> {
    let (out_w, out_h) = check_dims(template, source)?;
    let (u, v) = location;
    if u >= out_w || v >= out_h {
        return Err(Error::OutOfBounds {
            what: "correlogram location",
            value: if u >= out_w { u } else { v },
            limit: if u >= out_w { out_w } else { out_h },
        });
    }

    let (tw, th) = (template.width(), template.height());
    let (tc, sst) = center(template.data());

    let mut window = Vec::with_capacity(tw * th);
    for dy in 0..th {
        window.extend_from_slice(&source.row(v + dy)[u..u + tw]);
    }
    let (wc, ssw) = center(&window);

    let mut grad_template = Plane::zeros(tw, th);
    let mut grad_source = Plane::zeros(source.width(), source.height());

    if sst <= VARIANCE_FLOOR || ssw <= VARIANCE_FLOOR {
        return Ok(PeakGradient {
            location,
            grad_template,
            grad_source,
            zero_variance: true,
        });
    }

    let num: f64 = tc.iter().zip(&wc).map(|(a, b)| a * b).sum();
    let den = (sst * ssw).sqrt();

    for j in 0..tw * th {
        grad_template.data_mut()[j] = (wc[j] - (num / sst) * tc[j]) / den;
    }
    for dy in 0..th {
        for dx in 0..tw {
            let j = dy * tw + dx;
            let g = (tc[j] - (num / ssw) * wc[j]) / den;
            grad_source.set(u + dx, v + dy, g);
        }
    }

    Ok(PeakGradient {
        location,
        grad_template,
        grad_source,
        zero_variance: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_template_yields_flagged_zero_gradient() {
        let t = Plane::from_vec(3, 3, vec![5.0; 9]);
        let s = Plane::from_vec(6, 6, (0..36).map(|i| i as f64).collect());
        let g = peak_gradient_plane(&t, &s, (1, 1)).unwrap();
        assert!(g.zero_variance);
        assert!(g.grad_template.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_source.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_zero_along_scaling_direction_at_perfect_match() {
        // r(aT+b, W) is constant in a>0, so at T == W the directional
        // derivative of r along T itself (the scaling direction) is 0.
        let vals: Vec<f64> = (0..16).map(|i| ((i * 37 + 5) % 11) as f64 / 10.0).collect();
        let t = Plane::from_vec(4, 4, vals.clone());
        let s = Plane::from_vec(4, 4, vals.clone());
        let g = peak_gradient_plane(&t, &s, (0, 0)).unwrap();
        let dir_deriv: f64 = g
            .grad_template
            .data()
            .iter()
            .zip(&vals)
            .map(|(g, v)| g * v)
            .sum();
        assert!(dir_deriv.abs() < 1e-12, "got {dir_deriv}");
    }

    #[test]
    fn out_of_range_location_is_error() {
        let t = Plane::zeros(2, 2);
        let s = Plane::from_vec(4, 4, (0..16).map(|i| i as f64).collect());
        assert!(peak_gradient_plane(&t, &s, (3, 0)).is_err());
    }
}
