//! On-disk layout for synthetic stacks: per section an image plus two
//! warp-field rasters, and one manifest JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::raster::{load_f32, save_f32};
use crate::{Error, Result};

use super::synth::{SynthSpec, SynthStack, WarpField};

#[derive(Serialize, Deserialize)]
struct StackManifest {
    spec: SynthSpec,
    seed: u64,
    n_sections: usize,
}

/// Writes `section_XXX.f32`, `warp_XXX_dx.f32`, `warp_XXX_dy.f32`, and
/// `stack.json` into `dir`.
pub fn save_stack(stack: &SynthStack, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, section) in stack.sections.iter().enumerate() {
        save_f32(section, &dir.join(format!("section_{k:03}.f32")))?;
        save_f32(&stack.warps[k].dx, &dir.join(format!("warp_{k:03}_dx.f32")))?;
        save_f32(&stack.warps[k].dy, &dir.join(format!("warp_{k:03}_dy.f32")))?;
    }
    let manifest = StackManifest {
        spec: stack.spec.clone(),
        seed: stack.seed,
        n_sections: stack.sections.len(),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidArgument(format!("manifest serialization failed: {e}")))?;
    std::fs::write(dir.join("stack.json"), text).map_err(|e| Error::io(dir, e))
}

/// Reads a stack written by [`save_stack`].
pub fn load_stack(dir: &Path) -> Result<SynthStack> {
    let manifest_path = dir.join("stack.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: StackManifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&manifest_path, 0, format!("bad manifest: {e}")))?;
    let mut sections = Vec::with_capacity(manifest.n_sections);
    let mut warps = Vec::with_capacity(manifest.n_sections);
    for k in 0..manifest.n_sections {
        sections.push(load_f32(&dir.join(format!("section_{k:03}.f32")))?);
        warps.push(WarpField {
            dx: load_f32(&dir.join(format!("warp_{k:03}_dx.f32")))?,
            dy: load_f32(&dir.join(format!("warp_{k:03}_dy.f32")))?,
        });
    }
    Ok(SynthStack {
        spec: manifest.spec,
        seed: manifest.seed,
        sections,
        warps,
    })
}
