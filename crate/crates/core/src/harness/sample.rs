//! Caption-to-file sampling and a small SVG plot of the result.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diffusion::SampleRequest;
use crate::error::{Error, Result};
use crate::harness::Generator;
use crate::kinematics::recover_global_positions;
use crate::motion::{validate, write_motion_file, Joint, MotionSequence, MotionSidecar};
use crate::text::{Decomposer, PartTexts};

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub motion: MotionSequence,
    pub parts: PartTexts,
    pub path: PathBuf,
    pub plot: Option<PathBuf>,
}

/// File stem for a sampled clip: lowercase words of the caption, joined by
/// underscores, plus the seed.
pub fn sample_id(caption: &str, seed: u64) -> String {
    let words: Vec<String> = caption
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .take(8)
        .map(str::to_lowercase)
        .collect();
    format!("{}_s{seed}", words.join("_"))
}

/// Decomposes the caption, samples, and writes `<out_dir>/<id>.{bin,json}`
/// (plus `<id>.svg` when `plot` is set). The decomposer must use the
/// prompt version the generator was trained with.
pub fn end_to_end_sample(
    generator: &Generator,
    decomposer: &Decomposer,
    request: &SampleRequest,
    out_dir: &Path,
    plot: bool,
) -> Result<SampleOutput> {
    if let Some(trained) = generator.prompt_version() {
        if trained != decomposer.prompt_version() {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with prompt version {trained:?}, decomposer uses {:?}",
                decomposer.prompt_version()
            )));
        }
    }
    let parts = decomposer.decompose(&request.caption)?;
    let motion = generator
        .sample(&[(request, &parts)])?
        .pop()
        .ok_or_else(|| Error::Validation("sampler returned nothing".into()))?;
    validate(&motion).into_result()?;
    let id = sample_id(&request.caption, request.seed);
    let mut sidecar = MotionSidecar::new(&id, &motion);
    sidecar.caption = Some(request.caption.clone());
    sidecar.part_texts = Some(parts.clone());
    let path = write_motion_file(out_dir, &motion, &sidecar)?;
    let plot = if plot {
        let svg = out_dir.join(format!("{id}.svg"));
        fs::write(&svg, plot_svg(&motion, &request.caption)?).map_err(|e| Error::io(&svg, e))?;
        Some(svg)
    } else {
        None
    };
    Ok(SampleOutput {
        motion,
        parts,
        path,
        plot,
    })
}

fn polyline(points: &[(f64, f64)], (x0, y0, w, h): (f64, f64, f64, f64), colour: &str) -> String {
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    let sx = (hi_x - lo_x).max(1e-6);
    let sy = (hi_y - lo_y).max(1e-6);
    let pts: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.1},{:.1}", x0 + (x - lo_x) / sx * w, y0 + h - (y - lo_y) / sy * h))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        pts.join(" ")
    )
}

/// Two panels: the root's ground-plane trajectory, and head and foot
/// heights against time.
pub fn plot_svg(m: &MotionSequence, title: &str) -> Result<String> {
    let gp = recover_global_positions(m, crate::motion::DEFAULT_FPS)?;
    let root: Vec<(f64, f64)> = (0..gp.frames())
        .map(|f| {
            let p = gp.joint(f, Joint::PELVIS);
            (p[0] as f64, p[2] as f64)
        })
        .collect();
    let height = |j: Joint| -> Vec<(f64, f64)> {
        (0..gp.frames()).map(|f| (f as f64, gp.joint(f, j)[1] as f64)).collect()
    };
    let mut svg = String::new();
    let escaped = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"300\">\n\
         <text x=\"10\" y=\"18\" font-size=\"13\">{escaped}</text>\n\
         <text x=\"10\" y=\"290\" font-size=\"11\">root trajectory (x, z)</text>\n\
         <text x=\"330\" y=\"290\" font-size=\"11\">height: head (black), feet (blue, red)</text>\n"
    );
    svg.push_str(&polyline(&root, (10.0, 30.0, 290.0, 240.0), "green"));
    let panel = (330.0, 30.0, 300.0, 240.0);
    svg.push_str(&polyline(&height(Joint::HEAD), panel, "black"));
    svg.push_str(&polyline(&height(Joint::LEFT_FOOT), panel, "blue"));
    svg.push_str(&polyline(&height(Joint::RIGHT_FOOT), panel, "red"));
    svg.push_str("</svg>\n");
    Ok(svg)
}
