//! Per-endmember choice between autoencoder and GCN abundance maps, and
//! the metrics report.

use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::hsi::{write_file, AbundanceStack, EndmemberMatrix, GroundTruth};
use crate::metrics::{match_endmembers, rmse, sad, PermutationMatch};

pub const REPORT_CSV_HEADER: &str = "material,rmse_ae,rmse_gcn,rmse_final,sad,source";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Ae,
    Gcn,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Ae => "ae",
            Source::Gcn => "gcn",
        })
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ae" => Ok(Source::Ae),
            "gcn" => Ok(Source::Gcn),
            other => Err(Error::InvalidArgument(format!("unknown source {other:?}, expected ae or gcn"))),
        }
    }
}

/// RMSE of channel `j` restricted to `pixels`.
pub fn subset_rmse(truth: &AbundanceStack, estimate: &AbundanceStack, j: usize, pixels: &[usize]) -> Result<f64> {
    let t: Vec<f64> = pixels.iter().map(|&p| truth.pixel(p)[j]).collect();
    let e: Vec<f64> = pixels.iter().map(|&p| estimate.pixel(p)[j]).collect();
    rmse(&t, &e)
}

/// Outcome of [`ensemble_select`]; all RMSEs are on the validation pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub stack: AbundanceStack,
    pub choices: Vec<Source>,
    pub val_rmse_ae: Vec<f64>,
    pub val_rmse_gcn: Vec<f64>,
    /// Chosen channel before the final renormalization.
    pub val_rmse_selected: Vec<f64>,
    /// Chosen channel after the final renormalization.
    pub val_rmse_final: Vec<f64>,
}

/// For each channel keeps the source with the smaller validation RMSE (ties
/// go to the GCN), then renormalizes every pixel to sum to one.
pub fn ensemble_select(
    ae: &AbundanceStack,
    gcn: &AbundanceStack,
    truth: &AbundanceStack,
    validation: &[usize],
) -> Result<Selection> {
    if validation.is_empty() {
        return Err(Error::InvalidArgument("ensemble selection needs a non-empty validation subset".into()));
    }
    for s in [gcn, truth] {
        if (s.height(), s.width(), s.count()) != (ae.height(), ae.width(), ae.count()) {
            return Err(Error::shape("ensemble_select", "stacks differ in size or endmember count"));
        }
    }
    if let Some(&p) = validation.iter().find(|&&p| p >= ae.pixels()) {
        return Err(Error::InvalidArgument(format!("validation pixel {p} outside the image")));
    }
    let p = ae.count();
    let mut choices = Vec::with_capacity(p);
    let (mut val_rmse_ae, mut val_rmse_gcn, mut val_rmse_selected) = (Vec::new(), Vec::new(), Vec::new());
    let mut data = ae.data().to_vec();
    for j in 0..p {
        let ra = subset_rmse(truth, ae, j, validation)?;
        let rg = subset_rmse(truth, gcn, j, validation)?;
        let source = if rg <= ra { Source::Gcn } else { Source::Ae };
        if source == Source::Gcn {
            for px in 0..ae.pixels() {
                data[px * p + j] = gcn.pixel(px)[j];
            }
        }
        choices.push(source);
        val_rmse_ae.push(ra);
        val_rmse_gcn.push(rg);
        val_rmse_selected.push(ra.min(rg));
    }
    let mut stack = AbundanceStack::new(ae.height(), ae.width(), p, data)?;
    stack.renormalize();
    let val_rmse_final = (0..p).map(|j| subset_rmse(truth, &stack, j, validation)).collect::<Result<_>>()?;
    Ok(Selection {
        stack,
        choices,
        val_rmse_ae,
        val_rmse_gcn,
        val_rmse_selected,
        val_rmse_final,
    })
}

/// One material row of a report.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialMetrics {
    pub material: String,
    pub rmse_ae: Option<f64>,
    pub rmse_gcn: Option<f64>,
    pub rmse_final: f64,
    pub sad: f64,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub materials: Vec<MaterialMetrics>,
    pub mean_rmse: f64,
    pub mean_sad: f64,
    pub seed: Option<u64>,
    /// Wall-clock seconds; kept out of the CSV so reports stay reproducible.
    pub timing_secs: Option<f64>,
}

/// Candidate outputs of one run, in any endmember order.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceStack,
    pub ae_abundances: Option<AbundanceStack>,
    pub gcn_abundances: Option<AbundanceStack>,
    /// Per estimated channel; defaults to `ae` when absent.
    pub choices: Option<Vec<Source>>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { f64::NAN } else { s / n as f64 }
}

impl MetricsReport {
    /// Matches estimated endmembers to the truth and scores every channel
    /// against the full ground-truth maps. Rows follow the truth order.
    pub fn evaluate(estimate: &Estimate, truth: &GroundTruth, names: Option<&[String]>) -> Result<(Self, PermutationMatch)> {
        let gt = &truth.abundances;
        let check = |s: &AbundanceStack| {
            if (s.height(), s.width(), s.count()) != (gt.height(), gt.width(), gt.count()) {
                Err(Error::shape(
                    "evaluate",
                    format!(
                        "estimate {}x{}x{} vs truth {}x{}x{}",
                        s.height(),
                        s.width(),
                        s.count(),
                        gt.height(),
                        gt.width(),
                        gt.count()
                    ),
                ))
            } else {
                Ok(())
            }
        };
        check(&estimate.abundances)?;
        estimate.ae_abundances.iter().chain(&estimate.gcn_abundances).try_for_each(check)?;
        let matching = match_endmembers(&estimate.endmembers, &truth.endmembers)?;
        let order = matching.order();
        let em = estimate.endmembers.reorder(&order)?;
        let fin = estimate.abundances.reorder(&order)?;
        let ae = estimate.ae_abundances.as_ref().map(|s| s.reorder(&order)).transpose()?;
        let gcn = estimate.gcn_abundances.as_ref().map(|s| s.reorder(&order)).transpose()?;
        let p = gt.count();
        let mut materials = Vec::with_capacity(p);
        for k in 0..p {
            let truth_map = gt.channel(k);
            let score = |s: &AbundanceStack| rmse(&truth_map, &s.channel(k));
            materials.push(MaterialMetrics {
                material: names.and_then(|n| n.get(k).cloned()).unwrap_or_else(|| format!("em{k}")),
                rmse_ae: ae.as_ref().map(score).transpose()?,
                rmse_gcn: gcn.as_ref().map(score).transpose()?,
                rmse_final: score(&fin)?,
                sad: sad(&em.column(k), &truth.endmembers.column(k))?,
                source: estimate.choices.as_ref().map_or(Source::Ae, |c| c[order[k]]),
            });
        }
        Ok((Self::from_materials(materials), matching))
    }

    pub fn from_materials(materials: Vec<MaterialMetrics>) -> Self {
        MetricsReport {
            mean_rmse: mean(materials.iter().map(|m| m.rmse_final)),
            mean_sad: mean(materials.iter().map(|m| m.sad)),
            materials,
            seed: None,
            timing_secs: None,
        }
    }

    fn optional_mean(&self, f: impl Fn(&MaterialMetrics) -> Option<f64>) -> Option<f64> {
        self.materials.iter().map(&f).collect::<Option<Vec<f64>>>().map(|v| mean(v.into_iter()))
    }

    pub fn mean_rmse_ae(&self) -> Option<f64> {
        self.optional_mean(|m| m.rmse_ae)
    }

    pub fn mean_rmse_gcn(&self) -> Option<f64> {
        self.optional_mean(|m| m.rmse_gcn)
    }

    /// One row per material plus a `mean` row.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(sig9).unwrap_or_default();
        let mut out = format!("{REPORT_CSV_HEADER}\n");
        for m in &self.materials {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                m.material,
                opt(m.rmse_ae),
                opt(m.rmse_gcn),
                sig9(m.rmse_final),
                sig9(m.sad),
                m.source
            )
            .expect("write to string");
        }
        writeln!(
            out,
            "mean,{},{},{},{},",
            opt(self.mean_rmse_ae()),
            opt(self.mean_rmse_gcn()),
            sig9(self.mean_rmse),
            sig9(self.mean_sad)
        )
        .expect("write to string");
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }

    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut out = format!(
            "{:<12} {:>9} {:>9} {:>10} {:>9} {:>6}\n",
            "material", "rmse_ae", "rmse_gcn", "rmse_final", "sad", "source"
        );
        for m in &self.materials {
            writeln!(
                out,
                "{:<12} {:>9} {:>9} {:>10.4} {:>9.4} {:>6}",
                m.material,
                cell(m.rmse_ae),
                cell(m.rmse_gcn),
                m.rmse_final,
                m.sad,
                m.source.to_string()
            )
            .expect("write to string");
        }
        writeln!(
            out,
            "{:<12} {:>9} {:>9} {:>10.4} {:>9.4}",
            "mean",
            cell(self.mean_rmse_ae()),
            cell(self.mean_rmse_gcn()),
            self.mean_rmse,
            self.mean_sad
        )
        .expect("write to string");
        if let Some(seed) = self.seed {
            writeln!(out, "seed {seed}").expect("write to string");
        }
        if let Some(t) = self.timing_secs {
            writeln!(out, "time {t:.1} s").expect("write to string");
        }
        out
    }
}

/// Per-run rows plus mean and sample standard deviation rows over repeated
/// runs: `run,seed,mean_rmse,mean_sad,<material>_rmse…,<material>_sad…`.
pub fn summary_csv(reports: &[MetricsReport]) -> String {
    let names: Vec<&str> = reports.first().map(|r| r.materials.iter().map(|m| m.material.as_str()).collect()).unwrap_or_default();
    let mut out = String::from("run,seed,mean_rmse,mean_sad");
    for n in &names {
        write!(out, ",{n}_rmse").expect("write to string");
    }
    for n in &names {
        write!(out, ",{n}_sad").expect("write to string");
    }
    out.push('\n');
    let row = |r: &MetricsReport| -> Vec<f64> {
        let mut v = vec![r.mean_rmse, r.mean_sad];
        v.extend(r.materials.iter().map(|m| m.rmse_final));
        v.extend(r.materials.iter().map(|m| m.sad));
        v
    };
    let rows: Vec<Vec<f64>> = reports.iter().map(row).collect();
    for (i, (r, values)) in reports.iter().zip(&rows).enumerate() {
        let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
        write!(out, "{i},{seed}").expect("write to string");
        values.iter().for_each(|v| write!(out, ",{}", sig9(*v)).expect("write to string"));
        out.push('\n');
    }
    if !rows.is_empty() {
        let width = rows[0].len();
        let n = rows.len() as f64;
        let means: Vec<f64> = (0..width).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
        let stds: Vec<f64> = (0..width)
            .map(|c| {
                if rows.len() < 2 {
                    0.0
                } else {
                    (rows.iter().map(|r| (r[c] - means[c]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                }
            })
            .collect();
        for (label, values) in [("mean", &means), ("std", &stds)] {
            write!(out, "{label},").expect("write to string");
            values.iter().for_each(|v| write!(out, ",{}", sig9(*v)).expect("write to string"));
            out.push('\n');
        }
    }
    out
}
