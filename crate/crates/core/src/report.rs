//! Scoring, aggregation, latent-coupling analysis, the latent/reward MI
//! diagnostic, and plot/table emission.
//!
//! Everything here reads run artifacts; nothing mutates training state. The
//! reward diagnostic in particular trains its own throwaway statistics
//! networks so the run's estimators are untouched.

use crate::buffers::TrajectoryBuffer;
use crate::disc::DiscriminatorStack;
use crate::error::{Error, Result};
use crate::mine::{fit_mi, MiEstimate};
use crate::nets::Mat;
use rand_chacha::ChaCha20Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Reference returns that anchor the normalized score: 0 is random behavior,
/// 1 is expert behavior.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreScale {
    pub random_ref: f64,
    pub expert_ref: f64,
}

impl ScoreScale {
    pub fn new(random_ref: f64, expert_ref: f64) -> Result<ScoreScale> {
        let scale = ScoreScale {
            random_ref,
            expert_ref,
        };
        scale.check()?;
        Ok(scale)
    }

    fn check(&self) -> Result<()> {
        if !self.random_ref.is_finite() || !self.expert_ref.is_finite() {
            return Err(Error::contract("score scale references must be finite"));
        }
        if self.expert_ref == self.random_ref {
            return Err(Error::contract(
                "degenerate score scale: expert and random references coincide",
            ));
        }
        Ok(())
    }
}

/// Affine score: 0 at the random reference, 1 at the expert reference.
/// Values outside [0, 1] are meaningful (worse than random, above expert).
pub fn normalize_score(raw: f64, scale: &ScoreScale) -> Result<f64> {
    scale.check()?;
    Ok((raw - scale.random_ref) / (scale.expert_ref - scale.random_ref))
}

/// Running maximum of a performance curve.
pub fn best_so_far(curve: &[f64]) -> Result<Vec<f64>> {
    if curve.is_empty() {
        return Err(Error::contract("best_so_far needs a non-empty curve"));
    }
    let mut best = f64::NEG_INFINITY;
    Ok(curve
        .iter()
        .map(|&v| {
            best = best.max(v);
            best
        })
        .collect())
}

/// One latent-space nearest-neighbour match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingMatch {
    /// Index of the query observation in set A.
    pub query: usize,
    /// Index of its L1-closest observation in set B (ties: lowest index).
    pub matched: usize,
    pub distance: f64,
}

/// For `k` evenly spaced query observations from set A, the set-B
/// observation whose mean-path latent is closest in L1 distance.
pub fn latent_coupling(
    stack: &DiscriminatorStack,
    set_a: &[&[f32]],
    set_b: &[&[f32]],
    k: usize,
) -> Result<Vec<CouplingMatch>> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::contract("latent coupling needs non-empty sets"));
    }
    if k == 0 {
        return Err(Error::contract("latent coupling needs at least one query"));
    }
    let (mean_a, _) = stack.frame_latent_params(set_a)?;
    let (mean_b, _) = stack.frame_latent_params(set_b)?;
    let k = k.min(set_a.len());
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let query = i * set_a.len() / k;
        let qz = mean_a.row(query);
        let mut best = CouplingMatch {
            query,
            matched: 0,
            distance: f64::INFINITY,
        };
        for j in 0..set_b.len() {
            let d: f64 = qz
                .iter()
                .zip(mean_b.row(j))
                .map(|(x, y)| (x - y).abs())
                .sum();
            if d < best.distance {
                best.matched = j;
                best.distance = d;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// DV estimate of the information between latent rows and a scalar target,
/// using a fresh throwaway statistics pair.
pub fn reward_mi_from_rows(
    latents: &Mat,
    targets: &[f64],
    n_steps: usize,
    rng: &mut ChaCha20Rng,
) -> Result<MiEstimate> {
    if latents.rows() != targets.len() {
        return Err(Error::contract(format!(
            "{} latent rows but {} targets",
            latents.rows(),
            targets.len()
        )));
    }
    let mut data = Mat::zeros(latents.rows(), latents.cols() + 1);
    for i in 0..latents.rows() {
        let row = data.row_mut(i);
        row[..latents.cols()].copy_from_slice(latents.row(i));
        row[latents.cols()] = targets[i];
    }
    fit_mi(&data, None, n_steps, 128, 8, rng)
}

/// Information the window embedding carries about the evaluation reward.
/// Pairs every stored window with its step's true reward and trains a fresh
/// estimator; the run's own statistics networks are never touched.
pub fn mi_reward_diagnostic(
    stack: &DiscriminatorStack,
    buffer: &TrajectoryBuffer,
    n_steps: usize,
    rng: &mut ChaCha20Rng,
) -> Result<MiEstimate> {
    let mut windows = Vec::new();
    let mut rewards = Vec::new();
    for traj in buffer.trajectories() {
        for t in 0..traj.len() {
            windows.push(traj.window(t));
            rewards.push(traj.r_true[t]);
        }
    }
    if windows.is_empty() {
        return Err(Error::contract("reward diagnostic needs a non-empty buffer"));
    }
    let zhat = stack.window_embedding(&windows)?;
    reward_mi_from_rows(&zhat, &rewards, n_steps, rng)
}

/// One labelled curve with a symmetric uncertainty band.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveBand {
    pub label: String,
    pub epochs: Vec<usize>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl CurveBand {
    fn check(&self) -> Result<()> {
        if self.epochs.is_empty()
            || self.epochs.len() != self.mean.len()
            || self.mean.len() != self.stderr.len()
        {
            return Err(Error::contract(format!(
                "curve '{}' has mismatched or empty columns",
                self.label
            )));
        }
        Ok(())
    }
}

/// Files one report emission produces.
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub curve_png: PathBuf,
    pub curve_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub summary_txt: PathBuf,
}

/// Mean and standard error over per-seed values; one seed flags stderr 0.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Table cell in the publication format, three decimals.
pub fn format_cell(mean: f64, stderr: f64) -> String {
    format!("{mean:.3} ± {stderr:.3}")
}

/// Writes the comparison figure (mean curves with stderr bands), the data
/// behind it, and the final-score summary table as CSV and monospace text.
/// Curve colors follow band order; the CSV names each band.
pub fn emit_report(realm_label: &str, bands: &[CurveBand], out_dir: &Path) -> Result<ReportPaths> {
    if bands.is_empty() {
        return Err(Error::contract("report needs at least one completed run"));
    }
    for b in bands {
        b.check()?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let paths = ReportPaths {
        curve_png: out_dir.join(format!("curves_{realm_label}.png")),
        curve_csv: out_dir.join(format!("curves_{realm_label}.csv")),
        summary_csv: out_dir.join("summary.csv"),
        summary_txt: out_dir.join("summary.txt"),
    };

    let mut csv = String::from("label,epoch,mean,stderr\n");
    for b in bands {
        for i in 0..b.epochs.len() {
            writeln!(csv, "{},{},{},{}", b.label, b.epochs[i], b.mean[i], b.stderr[i]).unwrap();
        }
    }
    write_text(&paths.curve_csv, &csv)?;

    let mut summary_csv = String::from("label,final_mean,final_stderr,cell\n");
    let mut txt = format!("{realm_label}: final best-so-far normalized score\n");
    let label_w = bands.iter().map(|b| b.label.len()).max().unwrap().max(5);
    for b in bands {
        let (m, s) = (*b.mean.last().unwrap(), *b.stderr.last().unwrap());
        writeln!(summary_csv, "{},{},{},{}", b.label, m, s, format_cell(m, s)).unwrap();
        writeln!(txt, "  {:<label_w$}  {}", b.label, format_cell(m, s)).unwrap();
    }
    write_text(&paths.summary_csv, &summary_csv)?;
    write_text(&paths.summary_txt, &txt)?;

    render_curves(bands, &paths.curve_png)?;
    Ok(paths)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [127, 127, 127],
];

/// Minimal raster plot: white canvas, grey frame and gridlines, one shaded
/// stderr band plus mean polyline per curve. Numeric labels live in the
/// companion CSV; band order matches CSV order.
fn render_curves(bands: &[CurveBand], path: &Path) -> Result<()> {
    const W: u32 = 640;
    const H: u32 = 400;
    const M: u32 = 40; // margin on every side
    let mut img = image::RgbImage::from_pixel(W, H, image::Rgb([255, 255, 255]));

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut max_epoch = 0usize;
    for b in bands {
        for i in 0..b.mean.len() {
            lo = lo.min(b.mean[i] - b.stderr[i]);
            hi = hi.max(b.mean[i] + b.stderr[i]);
        }
        max_epoch = max_epoch.max(*b.epochs.iter().max().unwrap());
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::contract("curve values must be finite to plot"));
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x_of = |e: f64| -> f64 {
        let span = max_epoch.max(1) as f64;
        M as f64 + e / span * (W - 2 * M) as f64
    };
    let y_of = |v: f64| -> f64 { (H - M) as f64 - (v - lo) / (hi - lo) * (H - 2 * M) as f64 };

    let grid = image::Rgb([225, 225, 225]);
    for gx in 0..=4u32 {
        let x = M + gx * (W - 2 * M) / 4;
        for y in M..=(H - M) {
            img.put_pixel(x, y, grid);
        }
    }
    for gy in 0..=4u32 {
        let y = M + gy * (H - 2 * M) / 4;
        for x in M..=(W - M) {
            img.put_pixel(x, y, grid);
        }
    }

    for (bi, b) in bands.iter().enumerate() {
        let color = PALETTE[bi % PALETTE.len()];
        let band = image::Rgb([
            255 - (255 - color[0]) / 3,
            255 - (255 - color[1]) / 3,
            255 - (255 - color[2]) / 3,
        ]);
        // Shaded band: vertical spans column by column between the
        // linearly interpolated envelope edges.
        for x in (x_of(b.epochs[0] as f64).ceil() as u32)
            ..=(x_of(*b.epochs.last().unwrap() as f64).floor() as u32)
        {
            let (top, bottom) = envelope_at(b, x as f64, &x_of);
            let (y0, y1) = (y_of(top).max(M as f64), y_of(bottom).min((H - M) as f64));
            for y in (y0.ceil() as u32)..=(y1.floor() as u32).min(H - M) {
                if img.get_pixel(x, y).0 == [255, 255, 255] || img.get_pixel(x, y).0 == grid.0 {
                    img.put_pixel(x, y, band);
                }
            }
        }
        let line = image::Rgb(color);
        for w in b.epochs.windows(2).zip(b.mean.windows(2)) {
            let (e, m) = w;
            draw_line(
                &mut img,
                x_of(e[0] as f64),
                y_of(m[0]),
                x_of(e[1] as f64),
                y_of(m[1]),
                line,
            );
        }
        if b.epochs.len() == 1 {
            // Single evaluation point: draw a small cross so it is visible.
            let (x, y) = (x_of(b.epochs[0] as f64) as i64, y_of(b.mean[0]) as i64);
            for d in -3i64..=3 {
                put(&mut img, x + d, y, line);
                put(&mut img, x, y + d, line);
            }
        }
    }

    let frame = image::Rgb([60, 60, 60]);
    for x in M..=(W - M) {
        img.put_pixel(x, M, frame);
        img.put_pixel(x, H - M, frame);
    }
    for y in M..=(H - M) {
        img.put_pixel(M, y, frame);
        img.put_pixel(W - M, y, frame);
    }

    img.save(path)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Band envelope (mean ± stderr) linearly interpolated at pixel column `x`.
fn envelope_at(b: &CurveBand, x: f64, x_of: &impl Fn(f64) -> f64) -> (f64, f64) {
    let mut top = b.mean[0] + b.stderr[0];
    let mut bottom = b.mean[0] - b.stderr[0];
    for i in 0..b.epochs.len().saturating_sub(1) {
        let (x0, x1) = (x_of(b.epochs[i] as f64), x_of(b.epochs[i + 1] as f64));
        if x >= x0 && x <= x1 {
            let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
            let lerp = |a: f64, c: f64| a + t * (c - a);
            top = lerp(b.mean[i] + b.stderr[i], b.mean[i + 1] + b.stderr[i + 1]);
            bottom = lerp(b.mean[i] - b.stderr[i], b.mean[i + 1] - b.stderr[i + 1]);
            return (top, bottom);
        }
    }
    if let Some(last) = b.epochs.len().checked_sub(1) {
        if x >= x_of(b.epochs[last] as f64) {
            top = b.mean[last] + b.stderr[last];
            bottom = b.mean[last] - b.stderr[last];
        }
    }
    (top, bottom)
}

fn put(img: &mut image::RgbImage, x: i64, y: i64, c: image::Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_line(img: &mut image::RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, c: image::Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        put(
            img,
            (x0 + t * (x1 - x0)).round() as i64,
            (y0 + t * (y1 - y0)).round() as i64,
            c,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disc::StackConfig;
    use crate::mine::exact_discrete_mi;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn scale() -> ScoreScale {
        ScoreScale::new(10.0, 30.0).unwrap()
    }

    #[test]
    fn score_anchors() {
        let s = scale();
        assert_eq!(normalize_score(30.0, &s).unwrap(), 1.0);
        assert_eq!(normalize_score(10.0, &s).unwrap(), 0.0);
        assert_eq!(normalize_score(20.0, &s).unwrap(), 0.5);
        assert_eq!(normalize_score(40.0, &s).unwrap(), 1.5);
        assert_eq!(normalize_score(0.0, &s).unwrap(), -0.5);
    }

    #[test]
    fn degenerate_scale_is_rejected() {
        assert!(ScoreScale::new(5.0, 5.0).is_err());
        assert!(ScoreScale::new(f64::NAN, 1.0).is_err());
        let bad = ScoreScale {
            random_ref: 2.0,
            expert_ref: 2.0,
        };
        assert!(normalize_score(3.0, &bad).is_err());
    }

    #[test]
    fn running_maximum() {
        assert_eq!(
            best_so_far(&[0.2, 0.5, 0.4]).unwrap(),
            vec![0.2, 0.5, 0.5]
        );
        assert_eq!(
            best_so_far(&[1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(best_so_far(&[7.0; 4]).unwrap(), vec![7.0; 4]);
        assert!(best_so_far(&[]).is_err());
    }

    proptest! {
        // An affine monotone rescale commutes with the running maximum.
        #[test]
        fn normalize_commutes_with_best_so_far(curve in proptest::collection::vec(-50.0..50.0f64, 1..40)) {
            let s = scale();
            let a: Vec<f64> = best_so_far(&curve).unwrap()
                .into_iter().map(|v| normalize_score(v, &s).unwrap()).collect();
            let normalized: Vec<f64> = curve.iter().map(|&v| normalize_score(v, &s).unwrap()).collect();
            let b = best_so_far(&normalized).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        // L1 is symmetric in its arguments.
        #[test]
        fn coupling_distance_is_symmetric(
            a in proptest::collection::vec(-3.0..3.0f64, 6),
            b in proptest::collection::vec(-3.0..3.0f64, 6),
        ) {
            let d_ab: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            let d_ba: f64 = b.iter().zip(&a).map(|(x, y)| (x - y).abs()).sum();
            prop_assert!((d_ab - d_ba).abs() < 1e-12);
        }
    }

    fn tiny_stack(obs_len: usize) -> DiscriminatorStack {
        let mut rng = stream(3, Stream::Init);
        let mut cfg = StackConfig::new(obs_len);
        cfg.latent_dim = 3;
        cfg.hidden = 8;
        DiscriminatorStack::new(cfg, &mut rng).unwrap()
    }

    #[test]
    fn coupling_matches_itself_at_zero() {
        let stack = tiny_stack(2);
        let obs: Vec<Vec<f32>> = (0..6).map(|i| vec![i as f32 / 6.0, 1.0 - i as f32 / 6.0]).collect();
        let refs: Vec<&[f32]> = obs.iter().map(|o| o.as_slice()).collect();
        let matches = latent_coupling(&stack, &refs, &refs, 4).unwrap();
        assert_eq!(matches.len(), 4);
        for m in matches {
            assert_eq!(m.matched, m.query);
            assert!(m.distance.abs() < 1e-12);
        }
    }

    #[test]
    fn coupling_ties_break_to_the_lowest_index() {
        let stack = tiny_stack(2);
        // Identical set-B observations: every distance ties, index 0 wins.
        let a: Vec<Vec<f32>> = vec![vec![0.3, 0.7]];
        let b: Vec<Vec<f32>> = vec![vec![0.5, 0.5]; 5];
        let ra: Vec<&[f32]> = a.iter().map(|o| o.as_slice()).collect();
        let rb: Vec<&[f32]> = b.iter().map(|o| o.as_slice()).collect();
        let m = latent_coupling(&stack, &ra, &rb, 1).unwrap();
        assert_eq!(m[0].matched, 0);
        assert!(latent_coupling(&stack, &[], &rb, 1).is_err());
        assert!(latent_coupling(&stack, &ra, &rb, 0).is_err());
    }

    #[test]
    fn constant_latents_carry_no_reward_information() {
        let mut rng = stream(4, Stream::Eval);
        let n = 240;
        let latents = Mat::zeros(n, 3);
        let rewards: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let est = reward_mi_from_rows(&latents, &rewards, 300, &mut rng).unwrap();
        assert!(
            est.bits().abs() < 0.05,
            "constant rows must estimate ~0, got {} bits",
            est.bits()
        );
    }

    #[test]
    fn embedded_reward_recovers_its_entropy() {
        // z literally contains the binary reward: the DV estimate must land
        // near the exact plug-in MI of the (z, r) table, which is H(r).
        let mut rng = stream(5, Stream::Eval);
        let n = 400;
        let rewards: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let mut latents = Mat::zeros(n, 2);
        for i in 0..n {
            latents.row_mut(i)[0] = rewards[i];
            latents.row_mut(i)[1] = 0.5;
        }
        let mut counts = Mat::zeros(2, 2);
        for i in 0..n {
            let r = rewards[i] as usize;
            counts.row_mut(r)[r] += 1.0;
        }
        let oracle = exact_discrete_mi(&counts).unwrap();
        assert!((oracle.bits() - 1.0).abs() < 1e-12, "H(fair bit) is 1 bit");
        let est = reward_mi_from_rows(&latents, &rewards, 2500, &mut rng).unwrap();
        assert!(
            (est.bits() - oracle.bits()).abs() < 0.1,
            "embedded reward: {} bits vs oracle {}",
            est.bits(),
            oracle.bits()
        );
    }

    #[test]
    fn report_writes_figure_and_tables() {
        let dir = tempfile::tempdir().unwrap();
        let bands = vec![
            CurveBand {
                label: "disentangail".into(),
                epochs: vec![0, 1, 2, 3],
                mean: vec![0.1, 0.5, 0.8, 0.9],
                stderr: vec![0.05, 0.1, 0.06, 0.02],
            },
            CurveBand {
                label: "no_regularization".into(),
                epochs: vec![0, 1, 2, 3],
                mean: vec![0.1, 0.2, 0.3, 0.3],
                stderr: vec![0.05, 0.05, 0.08, 0.1],
            },
        ];
        let paths = emit_report("pointreach", &bands, dir.path()).unwrap();
        let img = image::open(&paths.curve_png).unwrap().to_rgb8();
        assert_eq!((img.width(), img.height()), (640, 400));
        // Both line colors must appear somewhere on the canvas.
        for want in [PALETTE[0], PALETTE[1]] {
            assert!(
                img.pixels().any(|p| p.0 == want),
                "missing curve color {want:?}"
            );
        }
        let txt = std::fs::read_to_string(&paths.summary_txt).unwrap();
        assert!(txt.contains("0.900 ± 0.020"), "table: {txt}");
        assert!(txt.contains("0.300 ± 0.100"), "table: {txt}");
        let csv = std::fs::read_to_string(&paths.curve_csv).unwrap();
        assert_eq!(csv.lines().count(), 9, "header + 2x4 rows");
        assert!(emit_report("pointreach", &[], dir.path()).is_err());
    }

    #[test]
    fn single_point_curves_render() {
        let dir = tempfile::tempdir().unwrap();
        let bands = vec![CurveBand {
            label: "epoch-zero".into(),
            epochs: vec![0],
            mean: vec![0.4],
            stderr: vec![0.0],
        }];
        let paths = emit_report("binaryworld", &bands, dir.path()).unwrap();
        let img = image::open(&paths.curve_png).unwrap().to_rgb8();
        assert!(img.pixels().any(|p| p.0 == PALETTE[0]));
    }

    #[test]
    fn stderr_of_one_value_is_flagged_zero() {
        let (m, s) = mean_stderr(&[2.5]);
        assert_eq!((m, s), (2.5, 0.0));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((m - 3.0).abs() < 1e-12);
        // stderr = sd/sqrt(n) with sd^2 = 2.5.
        assert!((s - (2.5f64 / 5.0).sqrt()).abs() < 1e-12);
    }
}
