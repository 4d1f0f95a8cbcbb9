//! Loss-trajectory analysis: least-squares trend fitting, four-way
//! classification of per-unit loss curves, fluctuation scoring, and
//! preference-tier binning.

use crate::error::{Error, Result};
use crate::parallel::parallel_map;
use crate::tensor::pairwise_mean;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Ordered losses of one unit (token, sample, ...) across checkpoints; the
/// abscissa is the checkpoint index 0..n.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTrajectory {
    pub unit_id: String,
    pub losses: Vec<f64>,
}

impl LossTrajectory {
    pub fn new(unit_id: impl Into<String>, losses: Vec<f64>) -> Result<Self> {
        if losses.len() < 2 {
            return Err(Error::contract("trajectory needs at least two checkpoints".to_string()));
        }
        if losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::domain("losses must be finite and non-negative".to_string()));
        }
        Ok(LossTrajectory { unit_id: unit_id.into(), losses })
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }
}

/// Ordinary-least-squares line over checkpoint indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrendFit {
    pub slope: f64,
    pub intercept: f64,
    /// Fitted end minus fitted start: slope * n.
    pub delta_l: f64,
    /// Mean squared residual of the fit.
    pub residual_variance: f64,
}

/// Closed-form OLS over x_i = 0..n.
pub fn fit_loss_trend(traj: &LossTrajectory) -> Result<TrendFit> {
    let m = traj.losses.len();
    if m < 2 {
        return Err(Error::contract("need at least two points to fit a line".to_string()));
    }
    let n = (m - 1) as f64;
    let mf = m as f64;
    let sx = mf * n / 2.0;
    let sxx = mf * n * (2.0 * n + 1.0) / 6.0;
    let sy: f64 = traj.losses.iter().sum();
    let sxy: f64 = traj.losses.iter().enumerate().map(|(i, l)| i as f64 * l).sum();

    let denom = mf * sxx - sx * sx;
    let slope = (mf * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / mf;

    let residuals: Vec<f64> = traj
        .losses
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let r = l - (slope * i as f64 + intercept);
            r * r
        })
        .collect();
    Ok(TrendFit {
        slope,
        intercept,
        delta_l: slope * n,
        residual_variance: pairwise_mean(&residuals),
    })
}

/// Trajectory class by fitted loss change and final level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    HighToHigh,
    LowToHigh,
    HighToLow,
    LowToLow,
}

pub const CATEGORIES: [Category; 4] = [
    Category::HighToHigh,
    Category::LowToHigh,
    Category::HighToLow,
    Category::LowToLow,
];

impl Category {
    pub fn label(self) -> &'static str {
        match self {
            Category::HighToHigh => "H->H",
            Category::LowToHigh => "L->H",
            Category::HighToLow => "H->L",
            Category::LowToLow => "L->L",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "H->H" => Ok(Category::HighToHigh),
            "L->H" => Ok(Category::LowToHigh),
            "H->L" => Ok(Category::HighToLow),
            "L->L" => Ok(Category::LowToLow),
            other => Err(Error::Parse(format!("unknown category {other:?}"))),
        }
    }
}

/// Loss-change threshold for the trending categories. The +/-0.2 default is
/// inclusive toward the flat middle branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub delta_threshold: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig { delta_threshold: 0.2 }
    }
}

/// delta_l < -thr: falling. delta_l > thr: rising. Otherwise flat, split by
/// the final loss against the corpus mean of final losses.
pub fn classify(delta_l: f64, final_loss: f64, l_mean: f64, config: &ClassifyConfig) -> Category {
    let thr = config.delta_threshold;
    if delta_l < -thr {
        Category::HighToLow
    } else if delta_l > thr {
        Category::LowToHigh
    } else if final_loss <= l_mean {
        Category::LowToLow
    } else {
        Category::HighToHigh
    }
}

/// Per-unit analysis row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitAnalysis {
    pub unit_id: String,
    pub fit: TrendFit,
    pub final_loss: f64,
    pub category: Category,
    /// RMS residual of the linear fit; 0 for perfectly linear curves.
    pub fluctuation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusAnalysis {
    pub units: Vec<UnitAnalysis>,
    /// Mean of final-checkpoint losses over the corpus.
    pub l_mean: f64,
    /// Category counts in [`CATEGORIES`] order; sums to the unit count.
    pub frequencies: [usize; 4],
}

/// Fit and classify every trajectory. All trajectories must share a length;
/// the corpus mean of final losses splits the flat middle band.
pub fn classify_corpus(
    trajectories: &[LossTrajectory],
    config: &ClassifyConfig,
) -> Result<CorpusAnalysis> {
    let Some(first) = trajectories.first() else {
        return Err(Error::contract("empty corpus".to_string()));
    };
    let len = first.losses.len();
    if trajectories.iter().any(|t| t.losses.len() != len) {
        return Err(Error::contract("trajectories have ragged lengths".to_string()));
    }

    let finals: Vec<f64> = trajectories.iter().map(|t| t.final_loss()).collect();
    let l_mean = pairwise_mean(&finals);

    let fits = parallel_map(trajectories, fit_loss_trend);
    let mut units = Vec::with_capacity(trajectories.len());
    let mut frequencies = [0usize; 4];
    for (traj, fit) in trajectories.iter().zip(fits) {
        let fit = fit?;
        let category = classify(fit.delta_l, traj.final_loss(), l_mean, config);
        frequencies[CATEGORIES.iter().position(|&c| c == category).unwrap()] += 1;
        units.push(UnitAnalysis {
            unit_id: traj.unit_id.clone(),
            fit,
            final_loss: traj.final_loss(),
            category,
            fluctuation: fit.residual_variance.sqrt(),
        });
    }
    Ok(CorpusAnalysis { units, l_mean, frequencies })
}

/// RMS residual of the fit: 0 for an exact line, scales linearly with the
/// losses.
pub fn fluctuation_score(fit: &TrendFit) -> f64 {
    fit.residual_variance.sqrt()
}

/// Quintile preference tiers: tier 1 holds the top fifth of scores, tier 5
/// the bottom. A unit's tier comes from the count of scores >= its own, so
/// tied units share the lower-preference tier (all-equal input is all
/// tier 5).
pub fn selection_tiers(scores: &[f64]) -> Result<Vec<u8>> {
    if scores.is_empty() {
        return Err(Error::contract("no scores to tier".to_string()));
    }
    let n = scores.len() as f64;
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    Ok(scores
        .iter()
        .map(|&s| {
            // Count of scores >= s via binary search on the ascending sort.
            let below = sorted.partition_point(|&v| v < s);
            let at_or_above = scores.len() - below;
            let tier = (5.0 * at_or_above as f64 / n).ceil() as u8;
            tier.clamp(1, 5)
        })
        .collect())
}

/// Selection score: how much worse the unit does now than under a
/// reference; a plumbing stand-in for a selection policy, so label it as
/// such wherever it is reported.
pub fn excess_loss_scores(current: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    if current.len() != reference.len() {
        return Err(Error::shape(format!(
            "length mismatch: {} current vs {} reference",
            current.len(),
            reference.len()
        )));
    }
    Ok(current.iter().zip(reference).map(|(c, r)| c - r).collect())
}

/// Read trajectories from CSV with header `unit_id,ck0,ck1,...`.
pub fn read_trajectories_csv<R: Read>(reader: R) -> Result<Vec<LossTrajectory>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("bad CSV header: {e}")))?
        .clone();
    if headers.len() < 3 || headers.get(0) != Some("unit_id") {
        return Err(Error::Parse(
            "expected header unit_id,ck0,ck1,... with at least two checkpoints".to_string(),
        ));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse(format!("bad CSV record: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::Parse(format!(
                "row {:?} has {} fields, header has {}",
                record.get(0),
                record.len(),
                headers.len()
            )));
        }
        let unit_id = record.get(0).unwrap().to_string();
        let losses = record
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad loss value {f:?} for unit {unit_id}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(LossTrajectory::new(unit_id, losses)?);
    }
    if out.is_empty() {
        return Err(Error::Parse("no data rows".to_string()));
    }
    Ok(out)
}

/// Write the analysis CSV: unit_id,a,b,delta_l,category,fluctuation,tier.
pub fn write_analysis_csv<W: Write>(
    writer: W,
    analysis: &CorpusAnalysis,
    tiers: &[u8],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit_id", "a", "b", "delta_l", "category", "fluctuation", "tier"])
        .map_err(io_err)?;
    for (u, tier) in analysis.units.iter().zip(tiers) {
        w.write_record([
            u.unit_id.as_str(),
            &format!("{}", u.fit.slope),
            &format!("{}", u.fit.intercept),
            &format!("{}", u.fit.delta_l),
            u.category.label(),
            &format!("{}", u.fluctuation),
            &tier.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

fn io_err(e: csv::Error) -> Error {
    Error::Parse(format!("CSV write failed: {e}"))
}

/// Five-tier palette, highest preference first: deep blue, blue, black,
/// orange, dark orange.
pub const TIER_COLORS: [(u8, u8, u8); 5] =
    [(0, 0, 255), (30, 144, 255), (0, 0, 0), (255, 180, 150), (255, 100, 0)];

/// Render an HTML report coloring each unit by its preference tier.
pub fn write_tier_report<W: Write>(
    mut w: W,
    analysis: &CorpusAnalysis,
    tiers: &[u8],
    score_label: &str,
) -> Result<()> {
    writeln!(w, "<!DOCTYPE html>")?;
    writeln!(w, "<html><head><meta charset=\"utf-8\"><title>Loss-trajectory report</title>")?;
    writeln!(
        w,
        "<style>body{{font-family:monospace}} .unit{{padding:1px 4px;margin:1px;display:inline-block;color:#fff}} .t3{{color:#fff}}</style>"
    )?;
    writeln!(w, "</head><body>")?;
    writeln!(w, "<h1>Loss-trajectory report</h1>")?;
    writeln!(
        w,
        "<p>{} units, mean final loss {:.6}. Category counts: {}.</p>",
        analysis.units.len(),
        analysis.l_mean,
        CATEGORIES
            .iter()
            .zip(analysis.frequencies)
            .map(|(c, n)| format!("{} = {n}", c.label()))
            .collect::<Vec<_>>()
            .join(", ")
    )?;
    writeln!(
        w,
        "<p>Tiers are quintiles of the <em>{score_label}</em> score (a stand-in heuristic, \
         not a fitted selection policy); tier 1 = highest preference.</p>"
    )?;
    writeln!(w, "<p>Legend:")?;
    for (i, (r, g, b)) in TIER_COLORS.iter().enumerate() {
        writeln!(
            w,
            " <span class=\"unit\" style=\"background:rgb({r},{g},{b})\">tier {}</span>",
            i + 1
        )?;
    }
    writeln!(w, "</p><div>")?;
    for (u, &tier) in analysis.units.iter().zip(tiers) {
        let (r, g, b) = TIER_COLORS[(tier as usize - 1).min(4)];
        writeln!(
            w,
            "<span class=\"unit\" style=\"background:rgb({r},{g},{b})\" title=\"{} dL={:.4} fluct={:.4}\">{}</span>",
            u.category.label(),
            u.fit.delta_l,
            u.fluctuation,
            html_escape(&u.unit_id),
        )?;
    }
    writeln!(w, "</div></body></html>")?;
    Ok(())
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(id: &str, losses: &[f64]) -> LossTrajectory {
        LossTrajectory::new(id, losses.to_vec()).unwrap()
    }

    #[test]
    fn constant_series_fits_flat_line() {
        let fit = fit_loss_trend(&traj("u", &[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.intercept, 1.0);
        assert_eq!(fit.delta_l, 0.0);
        assert_eq!(fit.residual_variance, 0.0);
    }

    #[test]
    fn exact_line_recovered() {
        let fit = fit_loss_trend(&traj("u", &[3.0, 2.0, 1.0])).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-15);
        assert!((fit.intercept - 3.0).abs() < 1e-15);
        assert!((fit.delta_l + 2.0).abs() < 1e-15);
    }

    #[test]
    fn normal_equations_hand_case() {
        // a = (4*7.7 - 6*6.1) / (4*14 - 36) = -0.29, b = 1.96
        let fit = fit_loss_trend(&traj("u", &[2.0, 1.5, 1.6, 1.0])).unwrap();
        assert!((fit.slope + 0.29).abs() < 1e-9, "slope {}", fit.slope);
        assert!((fit.intercept - 1.96).abs() < 1e-9, "intercept {}", fit.intercept);
    }

    #[test]
    fn fit_rejects_single_point() {
        assert!(LossTrajectory::new("u", vec![1.0]).is_err());
    }

    #[test]
    fn ols_is_optimal_against_grid_neighbors() {
        let trajs = [
            traj("a", &[2.0, 1.5, 1.6, 1.0]),
            traj("b", &[0.5, 0.9, 0.4, 1.4, 1.1]),
            traj("c", &[3.0, 3.0, 2.0]),
        ];
        for t in &trajs {
            let fit = fit_loss_trend(t).unwrap();
            let sse = |a: f64, b: f64| -> f64 {
                t.losses
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l - (a * i as f64 + b)).powi(2))
                    .sum()
            };
            let base = sse(fit.slope, fit.intercept);
            for da in [-1e-3, 0.0, 1e-3] {
                for db in [-1e-3, 0.0, 1e-3] {
                    if da == 0.0 && db == 0.0 {
                        continue;
                    }
                    assert!(base <= sse(fit.slope + da, fit.intercept + db) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn affine_shift_moves_intercept_only() {
        let base = traj("u", &[2.0, 1.5, 1.6, 1.0]);
        let shifted = traj("u", &[3.0, 2.5, 2.6, 2.0]);
        let f0 = fit_loss_trend(&base).unwrap();
        let f1 = fit_loss_trend(&shifted).unwrap();
        assert!((f0.slope - f1.slope).abs() < 1e-12);
        assert!((f0.delta_l - f1.delta_l).abs() < 1e-12);
        assert!((f1.intercept - f0.intercept - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classification_rules() {
        let cfg = ClassifyConfig::default();
        assert_eq!(classify(-0.5, 1.0, 1.0, &cfg), Category::HighToLow);
        assert_eq!(classify(0.5, 1.0, 1.0, &cfg), Category::LowToHigh);
        assert_eq!(classify(0.0, 0.8, 1.0, &cfg), Category::LowToLow);
        assert_eq!(classify(0.0, 1.2, 1.0, &cfg), Category::HighToHigh);
        // Boundaries are inclusive toward the flat branch.
        assert_eq!(classify(0.2, 1.5, 1.0, &cfg), Category::HighToHigh);
        assert_eq!(classify(-0.2, 0.5, 1.0, &cfg), Category::LowToLow);
        // Final loss exactly at the mean counts as low.
        assert_eq!(classify(0.0, 1.0, 1.0, &cfg), Category::LowToLow);
    }

    #[test]
    fn classification_is_total_and_exclusive() {
        let cfg = ClassifyConfig::default();
        let mut rng = crate::rng::CounterRng::new(3);
        for _ in 0..100_000 {
            let delta = rng.uniform(-1.0, 1.0);
            let delta = if rng.next_index(100) == 0 { 0.2 } else { delta };
            let delta = if rng.next_index(100) == 0 { -0.2 } else { delta };
            let l = rng.uniform(0.0, 2.0);
            let cat = classify(delta, l, 1.0, &cfg);
            assert!(CATEGORIES.contains(&cat));
        }
    }

    #[test]
    fn corpus_of_planted_lines_is_fully_recovered() {
        // Margins >= 0.3 from the thresholds; flat lines straddle the mean.
        let trajs = vec![
            traj("hh", &[2.0, 2.0, 2.0, 2.0]), // flat high
            traj("lh", &[0.2, 0.4, 0.6, 0.8]), // dL = +0.6
            traj("hl", &[1.9, 1.6, 1.3, 1.0]), // dL = -0.9
            traj("ll", &[0.4, 0.4, 0.4, 0.4]), // flat low
        ];
        let out = classify_corpus(&trajs, &ClassifyConfig::default()).unwrap();
        let got: Vec<Category> = out.units.iter().map(|u| u.category).collect();
        assert_eq!(
            got,
            vec![
                Category::HighToHigh,
                Category::LowToHigh,
                Category::HighToLow,
                Category::LowToLow
            ]
        );
        assert_eq!(out.frequencies, [1, 1, 1, 1]);
    }

    #[test]
    fn single_constant_trajectory_is_low_to_low() {
        let out = classify_corpus(&[traj("u", &[1.0, 1.0])], &ClassifyConfig::default()).unwrap();
        assert_eq!(out.units[0].category, Category::LowToLow);
    }

    #[test]
    fn frequencies_sum_to_corpus_size() {
        let mut rng = crate::rng::CounterRng::new(9);
        let trajs: Vec<LossTrajectory> = (0..200)
            .map(|i| {
                let losses: Vec<f64> = (0..5).map(|_| rng.uniform(0.0, 3.0)).collect();
                traj(&format!("u{i}"), &losses)
            })
            .collect();
        let out = classify_corpus(&trajs, &ClassifyConfig::default()).unwrap();
        assert_eq!(out.frequencies.iter().sum::<usize>(), 200);
    }

    #[test]
    fn ragged_corpus_is_rejected() {
        let trajs = vec![traj("a", &[1.0, 2.0]), traj("b", &[1.0, 2.0, 3.0])];
        assert!(classify_corpus(&trajs, &ClassifyConfig::default()).is_err());
    }

    #[test]
    fn fluctuation_zero_for_line_and_hand_value_for_zigzag() {
        let line = fit_loss_trend(&traj("u", &[3.0, 2.0, 1.0])).unwrap();
        assert_eq!(fluctuation_score(&line), 0.0);

        // OLS on [1,2,1,2]: slope 0.2, intercept 1.2; residuals
        // (-0.2, 0.6, -0.6, 0.2): RMS = sqrt(0.8/4).
        let fit = fit_loss_trend(&traj("u", &[1.0, 2.0, 1.0, 2.0])).unwrap();
        assert!((fit.slope - 0.2).abs() < 1e-12);
        assert!((fluctuation_score(&fit) - (0.2_f64).sqrt()).abs() < 1e-12);

        let tame = fit_loss_trend(&traj("u", &[1.0, 1.1, 1.0, 1.1])).unwrap();
        assert!(fluctuation_score(&fit) > fluctuation_score(&tame));
    }

    #[test]
    fn five_distinct_scores_fill_all_tiers() {
        let tiers = selection_tiers(&[5.0, 3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(tiers, vec![1, 3, 5, 2, 4]);
    }

    #[test]
    fn all_equal_scores_fall_to_tier_five() {
        let tiers = selection_tiers(&[2.0; 7]).unwrap();
        assert!(tiers.iter().all(|&t| t == 5));
    }

    #[test]
    fn hundred_scores_top_twenty_in_tier_one() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        let tiers = selection_tiers(&scores).unwrap();
        for (i, &t) in tiers.iter().enumerate() {
            let score = i + 1;
            let want = match score {
                81..=100 => 1,
                61..=80 => 2,
                41..=60 => 3,
                21..=40 => 4,
                _ => 5,
            };
            assert_eq!(t, want, "score {score}");
        }
    }

    #[test]
    fn tiers_are_permutation_equivariant() {
        let scores = [0.3, 1.7, -0.2, 0.9, 2.5, 0.3, 1.1];
        let tiers = selection_tiers(&scores).unwrap();
        let perm = [3usize, 0, 6, 2, 5, 1, 4];
        let shuffled: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let shuffled_tiers = selection_tiers(&shuffled).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(shuffled_tiers[k], tiers[i]);
        }
    }

    #[test]
    fn excess_scores_subtract_and_negate() {
        assert_eq!(excess_loss_scores(&[2.0, 1.0], &[1.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(excess_loss_scores(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        let a = excess_loss_scores(&[2.0, 0.5], &[1.0, 1.5]).unwrap();
        let b = excess_loss_scores(&[1.0, 1.5], &[2.0, 0.5]).unwrap();
        assert_eq!(a, b.iter().map(|x| -x).collect::<Vec<_>>());
        assert!(excess_loss_scores(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let input = "unit_id,ck0,ck1,ck2\nalpha,2.0,1.5,1.0\nbeta,0.5,0.6,0.7\n";
        let trajs = read_trajectories_csv(input.as_bytes()).unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0].unit_id, "alpha");
        assert_eq!(trajs[1].losses, vec![0.5, 0.6, 0.7]);

        let analysis = classify_corpus(&trajs, &ClassifyConfig::default()).unwrap();
        let scores: Vec<f64> = analysis.units.iter().map(|u| u.fluctuation).collect();
        let tiers = selection_tiers(&scores).unwrap();
        let mut out = Vec::new();
        write_analysis_csv(&mut out, &analysis, &tiers).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("unit_id,a,b,delta_l,category,fluctuation,tier\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(read_trajectories_csv("nope,ck0,ck1\nu,1,2\n".as_bytes()).is_err());
        assert!(read_trajectories_csv("unit_id,ck0,ck1\nu,1,zebra\n".as_bytes()).is_err());
        assert!(read_trajectories_csv("unit_id,ck0,ck1\n".as_bytes()).is_err());
    }

    #[test]
    fn html_report_renders_all_units() {
        let trajs = vec![traj("a<b", &[1.0, 0.5]), traj("plain", &[0.1, 0.9])];
        let analysis = classify_corpus(&trajs, &ClassifyConfig::default()).unwrap();
        let tiers = vec![1u8, 5u8];
        let mut out = Vec::new();
        write_tier_report(&mut out, &analysis, &tiers, "fluctuation").unwrap();
        let html = String::from_utf8(out).unwrap();
        assert!(html.contains("a&lt;b"));
        assert!(html.contains("rgb(0,0,255)"));
        assert!(html.contains("rgb(255,100,0)"));
    }
}
