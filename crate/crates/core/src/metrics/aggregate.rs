//! Rank conversion, cross-pair averaging and paired bootstrap errors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{average_ranks, spearman_agreement};
use crate::valuefunctions::VariantKind;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Sparsity,
    Sensitivity,
    Contrastivity,
    AttributionError,
    DeletionAuc,
    InsertionAuc,
    #[serde(rename = "recall_at_1")]
    Recall1,
    #[serde(rename = "recall_at_3")]
    Recall3,
    #[serde(rename = "recall_at_5")]
    Recall5,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::Sparsity,
        Metric::Sensitivity,
        Metric::Contrastivity,
        Metric::AttributionError,
        Metric::DeletionAuc,
        Metric::InsertionAuc,
        Metric::Recall1,
        Metric::Recall3,
        Metric::Recall5,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Sparsity => "sparsity",
            Metric::Sensitivity => "sensitivity",
            Metric::Contrastivity => "contrastivity",
            Metric::AttributionError => "attribution_error",
            Metric::DeletionAuc => "deletion_auc",
            Metric::InsertionAuc => "insertion_auc",
            Metric::Recall1 => "recall_at_1",
            Metric::Recall3 => "recall_at_3",
            Metric::Recall5 => "recall_at_5",
        }
    }

    /// Reported as within-pair ranks rather than raw means.
    pub fn is_scale_dependent(&self) -> bool {
        matches!(self, Metric::Sparsity | Metric::Sensitivity | Metric::Contrastivity | Metric::AttributionError)
    }

    pub fn higher_is_better(&self) -> bool {
        matches!(self, Metric::Contrastivity | Metric::InsertionAuc | Metric::Recall1 | Metric::Recall3 | Metric::Recall5)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub dataset: String,
    pub model: String,
}

impl PairKey {
    pub fn new(dataset: &str, model: &str) -> Self {
        PairKey {
            dataset: dataset.to_string(),
            model: model.to_string(),
        }
    }
}

/// Metric values of one explainer on one evaluation instance; `None` marks
/// an undefined value (excluded from means, counted as missing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub pair: PairKey,
    pub variant: VariantKind,
    pub instance: usize,
    pub values: BTreeMap<Metric, Option<f64>>,
}

/// Ranks with 1 = best and average ties; `None` entries stay unranked.
pub fn rank_table(values: &[Option<f64>], higher_is_better: bool) -> Vec<Option<f64>> {
    let present: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, if higher_is_better { -v } else { v })))
        .collect();
    let ranks = average_ranks(&present.iter().map(|p| p.1).collect::<Vec<_>>());
    let mut out = vec![None; values.len()];
    for ((i, _), r) in present.iter().zip(ranks) {
        out[*i] = Some(r);
    }
    out
}

/// Standard error of the mean by bootstrap (sample standard deviation of
/// `n_boot` resampled means).
pub fn bootstrap_mean_se(values: &[f64], n_boot: usize, seed: u64) -> f64 {
    if values.is_empty() || n_boot < 2 {
        return f64::NAN;
    }
    let mut rng = rng::stream(seed, "bootstrap-mean", &[]);
    let means: Vec<f64> = (0..n_boot)
        .map(|_| (0..values.len()).map(|_| values[rng.random_range(0..values.len())]).sum::<f64>() / values.len() as f64)
        .collect();
    sample_sd(&means)
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub variant: VariantKind,
    pub metric: Metric,
    /// `rank` for scale-dependent metrics, `mean` otherwise.
    pub kind: String,
    pub value: Option<f64>,
    pub se: Option<f64>,
    pub n_pairs: usize,
    pub n_instances: usize,
    pub n_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub pair: PairKey,
    pub variant: VariantKind,
    pub metric: Metric,
    pub mean: Option<f64>,
    pub rank: Option<f64>,
    pub n: usize,
    pub n_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub v: String,
    pub pairs: Vec<PairKey>,
    pub variants: Vec<VariantKind>,
    pub n_boot: usize,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    pub per_pair: Vec<PairRow>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn get(&self, variant: VariantKind, metric: Metric) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.variant == variant && r.metric == metric)
    }

    /// 1-based position of each variant when ordered best-first on `metric`.
    pub fn positions(&self, metric: Metric) -> BTreeMap<VariantKind, f64> {
        let vals: Vec<Option<f64>> = self.variants.iter().map(|&v| self.get(v, metric).and_then(|r| r.value)).collect();
        // Aggregated ranks are lower-is-better; raw means follow the metric's direction.
        let higher = !metric.is_scale_dependent() && metric.higher_is_better();
        let ranks = rank_table(&vals, higher);
        self.variants.iter().zip(ranks).filter_map(|(&v, r)| r.map(|r| (v, r))).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,metric,kind,value,se,n_pairs,n_instances,n_missing\n");
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.variant,
                r.metric.as_str(),
                r.kind,
                f(r.value),
                f(r.se),
                r.n_pairs,
                r.n_instances,
                r.n_missing
            );
        }
        s
    }
}

type Stats = BTreeMap<(PairKey, VariantKind, Metric), (f64, usize, usize)>;

struct Grouped {
    pairs: Vec<PairKey>,
    variants: Vec<VariantKind>,
    /// Per pair, the instance ids in ascending order.
    instances: BTreeMap<PairKey, Vec<usize>>,
    /// (pair, variant, instance) -> record index.
    index: BTreeMap<(PairKey, VariantKind, usize), usize>,
}

fn pair_stats(records: &[InstanceMetrics], g: &Grouped, sample: &BTreeMap<PairKey, Vec<usize>>) -> Stats {
    let mut out = Stats::new();
    for pair in &g.pairs {
        for &variant in &g.variants {
            for metric in Metric::ALL {
                let (mut sum, mut n, mut miss) = (0.0, 0usize, 0usize);
                for &inst in &sample[pair] {
                    let Some(&ri) = g.index.get(&(pair.clone(), variant, inst)) else { continue };
                    match records[ri].values.get(&metric) {
                        Some(Some(v)) if v.is_finite() => {
                            sum += v;
                            n += 1;
                        }
                        Some(_) => miss += 1,
                        None => {}
                    }
                }
                out.insert((pair.clone(), variant, metric), (sum, n, miss));
            }
        }
    }
    out
}

/// Aggregated value per (variant, metric) plus the within-pair rank table.
fn aggregate(stats: &Stats, g: &Grouped) -> (BTreeMap<(VariantKind, Metric), Option<f64>>, BTreeMap<(PairKey, VariantKind, Metric), Option<f64>>) {
    let mut ranks = BTreeMap::new();
    for pair in &g.pairs {
        for metric in Metric::ALL.into_iter().filter(Metric::is_scale_dependent) {
            let means: Vec<Option<f64>> = g
                .variants
                .iter()
                .map(|&v| {
                    let (s, n, _) = stats[&(pair.clone(), v, metric)];
                    (n > 0).then(|| s / n as f64)
                })
                .collect();
            for (&v, r) in g.variants.iter().zip(rank_table(&means, metric.higher_is_better())) {
                ranks.insert((pair.clone(), v, metric), r);
            }
        }
    }
    let mut agg = BTreeMap::new();
    for &v in &g.variants {
        for metric in Metric::ALL {
            let vals: Vec<f64> = g
                .pairs
                .iter()
                .filter_map(|p| {
                    if metric.is_scale_dependent() {
                        ranks[&(p.clone(), v, metric)]
                    } else {
                        let (s, n, _) = stats[&(p.clone(), v, metric)];
                        (n > 0).then(|| s / n as f64)
                    }
                })
                .collect();
            agg.insert((v, metric), (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64));
        }
    }
    (agg, ranks)
}

/// Within-pair ranks for scale-dependent metrics, direct means otherwise,
/// averaged across pairs; SEs from `n_boot` paired instance resamples per pair.
pub fn aggregate_report(records: &[InstanceMetrics], n_boot: usize, seed: u64) -> Result<MetricReport> {
    let pairs: Vec<PairKey> = records.iter().map(|r| r.pair.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let variants: Vec<VariantKind> = records.iter().map(|r| r.variant).collect::<BTreeSet<_>>().into_iter().collect();
    if variants.len() < 2 {
        return Err(Error::InvalidParameter(format!("ranking needs at least 2 variants, got {}", variants.len())));
    }
    let mut instances: BTreeMap<PairKey, BTreeSet<usize>> = BTreeMap::new();
    let mut index = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        instances.entry(r.pair.clone()).or_default().insert(r.instance);
        if index.insert((r.pair.clone(), r.variant, r.instance), i).is_some() {
            return Err(Error::InvalidParameter(format!(
                "duplicate record for {}/{} {} instance {}",
                r.pair.dataset, r.pair.model, r.variant, r.instance
            )));
        }
    }
    for pair in &pairs {
        let n_var = records.iter().filter(|r| &r.pair == pair).map(|r| r.variant).collect::<BTreeSet<_>>().len();
        if n_var < 2 {
            return Err(Error::InvalidParameter(format!(
                "pair {}/{} has fewer than 2 variants; ranks are undefined",
                pair.dataset, pair.model
            )));
        }
    }
    let g = Grouped {
        pairs: pairs.clone(),
        variants: variants.clone(),
        instances: instances.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect(),
        index,
    };
    let stats = pair_stats(records, &g, &g.instances);
    let (agg, ranks) = aggregate(&stats, &g);

    let mut boot: BTreeMap<(VariantKind, Metric), Vec<f64>> = BTreeMap::new();
    let mut rng = rng::stream(seed, "bootstrap", &[]);
    for _ in 0..n_boot {
        let sample: BTreeMap<PairKey, Vec<usize>> = g
            .instances
            .iter()
            .map(|(p, ids)| (p.clone(), (0..ids.len()).map(|_| ids[rng.random_range(0..ids.len())]).collect()))
            .collect();
        let (a, _) = aggregate(&pair_stats(records, &g, &sample), &g);
        for (k, v) in a {
            if let Some(v) = v {
                boot.entry(k).or_default().push(v);
            }
        }
    }

    let mut rows = Vec::new();
    for &v in &variants {
        for metric in Metric::ALL {
            let (mut n_inst, mut n_miss, mut n_pairs) = (0, 0, 0);
            for p in &pairs {
                let (_, n, m) = stats[&(p.clone(), v, metric)];
                n_inst += n;
                n_miss += m;
                n_pairs += usize::from(n > 0);
            }
            let se = boot.get(&(v, metric)).filter(|b| b.len() >= 2).map(|b| sample_sd(b));
            rows.push(MetricRow {
                variant: v,
                metric,
                kind: if metric.is_scale_dependent() { "rank" } else { "mean" }.to_string(),
                value: agg[&(v, metric)],
                se,
                n_pairs,
                n_instances: n_inst,
                n_missing: n_miss,
            });
        }
    }
    let mut per_pair = Vec::new();
    for p in &pairs {
        for &v in &variants {
            for metric in Metric::ALL {
                let (s, n, m) = stats[&(p.clone(), v, metric)];
                per_pair.push(PairRow {
                    pair: p.clone(),
                    variant: v,
                    metric,
                    mean: (n > 0).then(|| s / n as f64),
                    rank: ranks.get(&(p.clone(), v, metric)).copied().flatten(),
                    n,
                    n_missing: m,
                });
            }
        }
    }
    Ok(MetricReport {
        v: "v1".into(),
        pairs,
        variants,
        n_boot,
        seed,
        rows,
        per_pair,
        notes: BTreeMap::new(),
    })
}

/// Mean pairwise Spearman agreement between variants over instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub v: String,
    pub variants: Vec<VariantKind>,
    pub mean: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

impl AgreementMatrix {
    /// `attributions[v][i]` is the attribution of variant `v` on instance `i`.
    pub fn from_attributions(variants: &[VariantKind], attributions: &[Vec<Vec<f64>>]) -> Self {
        let k = variants.len();
        let mut mean = vec![vec![None; k]; k];
        let mut counts = vec![vec![0; k]; k];
        for a in 0..k {
            mean[a][a] = Some(1.0);
            counts[a][a] = attributions[a].len();
            for b in a + 1..k {
                let vals: Vec<f64> = attributions[a]
                    .iter()
                    .zip(&attributions[b])
                    .filter_map(|(x, y)| spearman_agreement(x, y))
                    .collect();
                let m = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
                mean[a][b] = m;
                mean[b][a] = m;
                counts[a][b] = vals.len();
                counts[b][a] = vals.len();
            }
        }
        AgreementMatrix {
            v: "v1".into(),
            variants: variants.to_vec(),
            mean,
            counts,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant");
        for v in &self.variants {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
        for (i, v) in self.variants.iter().enumerate() {
            let _ = write!(s, "{v}");
            for m in &self.mean[i] {
                let _ = write!(s, ",{}", m.map(|x| format!("{x:.6}")).unwrap_or_default());
            }
            s.push('\n');
        }
        s
    }
}
