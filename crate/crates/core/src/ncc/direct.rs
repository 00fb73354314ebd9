//! Spatial-domain correlogram computation.
//!
//! Per placement, the numerator is a direct dot product of the centered
//! template against the source window; window sums come from sliding
//! running sums. This route shares no code with the FFT path and serves
//! as its oracle.

use rayon::prelude::*;

use crate::{Correlogram, Plane, Raster, Result};

use super::{center, check_dims, normalized_r};

/// Direct NCC on rasters; computed in f64, emitted as f32.
pub fn ncc_direct(template: &Raster, source: &Raster) -> Result<Correlogram> {
    let p = ncc_direct_plane(&Plane::from_raster(template), &Plane::from_raster(source))?;
    Ok(Correlogram::from_plane(&p))
}

/// Direct NCC with double-precision output.
pub fn ncc_direct_plane(template: &Plane, source: &Plane) -> Result<Plane> {
    let (out_w, out_h) = check_dims(template, source)?;
    let (tw, th) = (template.width(), template.height());
    let sw = source.width();
    let n = (tw * th) as f64;

    let (tc, sst) = center(template.data());

    // vertical running sums over template-height bands, one row per placement row
    let mut col_sum = vec![0.0f64; out_h * sw];
    let mut col_sq = vec![0.0f64; out_h * sw];
    for x in 0..sw {
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for y in 0..th {
            let v = source.get(x, y);
            acc += v;
            acc2 += v * v;
        }
        col_sum[x] = acc;
        col_sq[x] = acc2;
        for v in 1..out_h {
            let add = source.get(x, v + th - 1);
            let sub = source.get(x, v - 1);
            acc += add - sub;
            acc2 += add * add - sub * sub;
            col_sum[v * sw + x] = acc;
            col_sq[v * sw + x] = acc2;
        }
    }

    let mut out = vec![0.0f64; out_w * out_h];
    out.par_chunks_mut(out_w)
        .enumerate()
        .for_each(|(v, out_row)| {
            let cs = &col_sum[v * sw..(v + 1) * sw];
            let cq = &col_sq[v * sw..(v + 1) * sw];
            // horizontal sliding sums of the vertical band sums
            let mut ws: f64 = cs[..tw].iter().sum();
            let mut wq: f64 = cq[..tw].iter().sum();
            for u in 0..out_w {
                if u > 0 {
                    ws += cs[u + tw - 1] - cs[u - 1];
                    wq += cq[u + tw - 1] - cq[u - 1];
                }
                let mut num = 0.0f64;
                for dy in 0..th {
                    let trow = &tc[dy * tw..(dy + 1) * tw];
                    let srow = &source.row(v + dy)[u..u + tw];
                    let mut acc = 0.0f64;
                    for i in 0..tw {
                        acc += trow[i] * srow[i];
                    }
                    num += acc;
                }
                let ssw = (wq - ws * ws / n).max(0.0);
                out_row[u] = normalized_r(num, sst, ssw);
            }
        });

    Ok(Plane::from_vec(out_w, out_h, out))
}
