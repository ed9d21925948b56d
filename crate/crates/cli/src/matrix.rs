//! The four combination strategies run side by side on one synthetic dataset.

use std::fmt::Write as _;

use panfuse::coco::InstancesByImage;
use panfuse::ensemble::{argmax_labels, ensemble_average};
use panfuse::expert::{merge_by_image, ExpertRouting};
use panfuse::fusion::{fuse_batch, FusionInput, FusionParams, FusionStats};
use panfuse::metrics::{pq_dataset, pq_summarize, PqMean};
use panfuse::{par, LabelMap, ScoredInstance};
use serde::Serialize;

use crate::error::Result;
use crate::synthdata::SynthDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// All instance outputs unfiltered, first semantic model only.
    Baseline,
    /// Routed expert outputs, first semantic model only.
    Experts,
    /// All instance outputs unfiltered, averaged semantic models.
    Ensemble,
    /// Routed expert outputs and averaged semantic models.
    ExpertsEnsemble,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Baseline,
        Strategy::Experts,
        Strategy::Ensemble,
        Strategy::ExpertsEnsemble,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Baseline => "Baseline",
            Strategy::Experts => "+ Experts",
            Strategy::Ensemble => "+ Ensemble",
            Strategy::ExpertsEnsemble => "+ Experts + Ensemble",
        }
    }

    fn routed(self) -> bool {
        matches!(self, Strategy::Experts | Strategy::ExpertsEnsemble)
    }

    fn ensembled(self) -> bool {
        matches!(self, Strategy::Ensemble | Strategy::ExpertsEnsemble)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixRow {
    pub strategy: Strategy,
    pub all: PqMean,
    pub things: PqMean,
    pub stuff: PqMean,
    pub fusion: FusionStats,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixReport {
    pub seed: u64,
    pub images: usize,
    pub rows: Vec<MatrixRow>,
}

impl MatrixReport {
    pub fn row(&self, s: Strategy) -> &MatrixRow {
        self.rows.iter().find(|r| r.strategy == s).expect("every strategy is run")
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<22} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            "Strategy", "PQ", "SQ", "RQ", "PQ_th", "SQ_th", "RQ_th", "PQ_st", "SQ_st", "RQ_st"
        );
        for r in &self.rows {
            let mut line = format!("{:<22}", r.strategy.label());
            for m in [&r.all, &r.things, &r.stuff] {
                for v in [m.pq, m.sq, m.rq] {
                    let _ = write!(line, " {:>6.1}", 100.0 * v);
                }
            }
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

fn unrouted(experts: &std::collections::BTreeMap<String, InstancesByImage>, id: u64) -> Vec<ScoredInstance> {
    experts
        .values()
        .filter_map(|by_image| by_image.get(&id))
        .flatten()
        .cloned()
        .collect()
}

/// Run every strategy over `data` and score each against its ground truth.
pub fn run_matrix(
    data: &SynthDataset,
    routing: &ExpertRouting,
    params: &FusionParams,
    seed: u64,
) -> Result<MatrixReport> {
    let ids: Vec<u64> = data.gt.iter().map(|(id, _)| *id).collect();
    let merged = merge_by_image(&data.experts, routing)?;
    let single: Vec<LabelMap> = par::map(&data.semantic[0], argmax_labels);
    let ensembled: Vec<LabelMap> = par::try_map_range(ids.len(), |i| {
        let maps: Vec<_> = data.semantic.iter().map(|m| m[i].clone()).collect();
        ensemble_average(&maps).map(|avg| argmax_labels(&avg))
    })?;

    let mut rows = Vec::new();
    for strategy in Strategy::ALL {
        let inputs: Vec<FusionInput> = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| FusionInput {
                image_id: id,
                instances: if strategy.routed() {
                    merged.get(&id).cloned().unwrap_or_default()
                } else {
                    unrouted(&data.experts, id)
                },
                semantic: if strategy.ensembled() {
                    ensembled[i].clone()
                } else {
                    single[i].clone()
                },
            })
            .collect();
        let batch = fuse_batch(&inputs, params, &data.categories)?;
        let stats = pq_dataset(&data.gt, &batch.images, &data.categories)?;
        let summary = pq_summarize(&stats, &data.categories);
        rows.push(MatrixRow {
            strategy,
            all: summary.all,
            things: summary.things,
            stuff: summary.stuff,
            fusion: batch.stats,
        });
    }
    Ok(MatrixReport {
        seed,
        images: ids.len(),
        rows,
    })
}
