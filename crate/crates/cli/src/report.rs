//! Evaluation results and the three report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, Result};
use serde::{Deserialize, Serialize};

use domain_rescore::classifier::ClassifierReport;
use domain_rescore::corpus::Domain;
use domain_rescore::metrics::{relative_delta, WerBreakdown};
use domain_rescore::rescorer::System;
use domain_rescore::weight_opt::{SaObjective, SaPoint};

/// Split keys of the WER table, in display order.
pub const WER_SPLITS: [&str; 5] = ["nav", "music", "shop", "other", "all"];
/// The domain splits that carry slots.
pub const SLOT_SPLITS: [&str; 3] = ["nav", "music", "shop"];
/// PPL matrix rows (models) and columns (eval splits).
pub const PPL_ROWS: [&str; 4] = ["genrl", "nav", "music", "shop"];
pub const PPL_COLUMNS: [&str; 4] = ["other", "nav", "music", "shop"];

pub fn split_key(domain: Domain) -> &'static str {
    domain.tag()
}

pub fn row_name(system: System) -> &'static str {
    match system {
        System::General => "LM_Genrl",
        System::Navigation => "LM_Nav",
        System::Music => "LM_Music",
        System::Shopping => "LM_Shop",
        System::DomainAware => "DomainAware",
        System::EmBaseline => "AdaptationBaseline",
    }
}

/// Table row order.
pub const SYSTEM_ORDER: [System; 6] = [
    System::General,
    System::Navigation,
    System::Music,
    System::Shopping,
    System::DomainAware,
    System::EmBaseline,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub errors: usize,
    pub ref_tokens: usize,
    pub rate: f64,
}

impl From<WerBreakdown> for Rate {
    fn from(b: WerBreakdown) -> Rate {
        Rate {
            errors: b.errors(),
            ref_tokens: b.ref_tokens,
            rate: b.wer(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub wer: Rate,
    /// Absent on splits without slot annotations.
    pub slot_wer: Option<Rate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemEvaluation {
    pub lambda: f64,
    pub gamma: f64,
    pub metrics: BTreeMap<String, SplitMetrics>,
    /// Number of utterances rescored by each model.
    pub chosen_models: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub utterances: usize,
    pub mean_nbest_size: f64,
    pub firstpass: BTreeMap<String, SplitMetrics>,
    pub oracle: BTreeMap<String, SplitMetrics>,
    pub systems: BTreeMap<String, SystemEvaluation>,
    /// `ppl[model][split]` on the eval split.
    pub ppl: BTreeMap<String, BTreeMap<String, f64>>,
    pub classifier: ClassifierReport,
}

/// Result of one annealing run on the dev set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningOutcome {
    pub objective: SaObjective,
    pub lambda: f64,
    pub gamma: f64,
    pub value: f64,
    pub dev_wer: f64,
    pub dev_slot_wer: f64,
}

/// Optimizer report written by `optimize-weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub system: String,
    pub best_lambda: f64,
    pub best_gamma: f64,
    /// Best value of the configured objective (WER or SlotWER).
    pub best_wer: f64,
    pub objective: SaObjective,
    pub dev_wer: f64,
    pub dev_slot_wer: f64,
    pub probes: Vec<(SaPoint, f64)>,
    pub evaluations: usize,
    pub trace: Vec<domain_rescore::weight_opt::TraceEntry>,
    /// The same search under the other objective, for comparison.
    pub alternate: TuningOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplTable {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub ppl: BTreeMap<String, BTreeMap<String, f64>>,
    /// Relative change (%) of each adapted model against the general one.
    pub relative: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTable {
    pub classes: Vec<ClassRow>,
    pub confusion: [[usize; 4]; 4],
    pub accuracy_max_class: f64,
    pub threshold: f64,
    pub accuracy_thresholded: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerRow {
    pub name: String,
    pub system: String,
    pub wer: BTreeMap<String, f64>,
    /// Relative change (%) against the first-pass one-best.
    pub wer_delta: BTreeMap<String, f64>,
    /// Relative change (%) against general rescoring.
    pub wer_delta_vs_general: BTreeMap<String, f64>,
    pub slot_wer: BTreeMap<String, f64>,
    pub slot_wer_delta: BTreeMap<String, f64>,
    pub slot_wer_delta_vs_general: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerTable {
    pub columns: Vec<String>,
    pub firstpass_wer: BTreeMap<String, f64>,
    pub firstpass_slot_wer: BTreeMap<String, f64>,
    pub rows: Vec<WerRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub system: String,
    pub lambda: f64,
    pub gamma: f64,
    pub objective: SaObjective,
    pub dev_wer: f64,
    pub dev_slot_wer: f64,
    pub alternate: TuningOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub ppl: PplTable,
    pub classifier: ClassifierTable,
    pub wer: WerTable,
    pub weights: Vec<WeightRow>,
    pub eval_utterances: usize,
    pub mean_nbest_size: f64,
}

impl Report {
    pub fn row(&self, name: &str) -> Option<&WerRow> {
        self.wer.rows.iter().find(|r| r.name == name)
    }
}

fn pct(system: f64, baseline: f64) -> f64 {
    relative_delta(system, baseline).unwrap_or(f64::NAN)
}

fn wer_row(name: &str, system: &str, metrics: &BTreeMap<String, SplitMetrics>, ev: &Evaluation) -> WerRow {
    let general = ev.systems.get(System::General.tag()).map(|g| &g.metrics);
    let mut row = WerRow {
        name: name.into(),
        system: system.into(),
        wer: BTreeMap::new(),
        wer_delta: BTreeMap::new(),
        wer_delta_vs_general: BTreeMap::new(),
        slot_wer: BTreeMap::new(),
        slot_wer_delta: BTreeMap::new(),
        slot_wer_delta_vs_general: BTreeMap::new(),
    };
    for split in WER_SPLITS {
        let (Some(m), Some(fp)) = (metrics.get(split), ev.firstpass.get(split)) else {
            continue;
        };
        row.wer.insert(split.into(), m.wer.rate);
        row.wer_delta.insert(split.into(), pct(m.wer.rate, fp.wer.rate));
        if let Some(g) = general.and_then(|g| g.get(split)) {
            row.wer_delta_vs_general
                .insert(split.into(), pct(m.wer.rate, g.wer.rate));
        }
        if let (Some(s), Some(fs)) = (m.slot_wer, fp.slot_wer) {
            row.slot_wer.insert(split.into(), s.rate);
            row.slot_wer_delta.insert(split.into(), pct(s.rate, fs.rate));
            if let Some(gs) = general.and_then(|g| g.get(split)).and_then(|g| g.slot_wer) {
                row.slot_wer_delta_vs_general.insert(split.into(), pct(s.rate, gs.rate));
            }
        }
    }
    row
}

pub fn build_report(ev: &Evaluation, optimizers: &[OptimizerReport]) -> Result<Report> {
    let general_ppl = ev
        .ppl
        .get("genrl")
        .ok_or_else(|| anyhow!("evaluation lacks general-model perplexities"))?;
    let mut relative = BTreeMap::new();
    for row in PPL_ROWS.iter().skip(1) {
        let Some(ppl) = ev.ppl.get(*row) else { continue };
        let rel = PPL_COLUMNS
            .iter()
            .filter_map(|c| Some((c.to_string(), pct(*ppl.get(*c)?, *general_ppl.get(*c)?))))
            .collect();
        relative.insert(row.to_string(), rel);
    }
    let ppl = PplTable {
        rows: PPL_ROWS.iter().map(|s| s.to_string()).collect(),
        columns: PPL_COLUMNS.iter().map(|s| s.to_string()).collect(),
        ppl: ev.ppl.clone(),
        relative,
    };

    let c = &ev.classifier;
    let classifier = ClassifierTable {
        classes: Domain::ALL
            .iter()
            .map(|d| ClassRow {
                class: d.name().into(),
                precision: c.per_class[d.index()].precision,
                recall: c.per_class[d.index()].recall,
                support: c.per_class[d.index()].support,
            })
            .collect(),
        confusion: c.confusion,
        accuracy_max_class: c.accuracy,
        threshold: c.threshold,
        accuracy_thresholded: c.thresholded_accuracy,
    };

    let mut rows = Vec::new();
    for system in SYSTEM_ORDER {
        if let Some(s) = ev.systems.get(system.tag()) {
            rows.push(wer_row(row_name(system), system.tag(), &s.metrics, ev));
        }
    }
    rows.push(wer_row("Oracle", "oracle", &ev.oracle, ev));
    let wer = WerTable {
        columns: WER_SPLITS.iter().map(|s| s.to_string()).collect(),
        firstpass_wer: ev.firstpass.iter().map(|(k, m)| (k.clone(), m.wer.rate)).collect(),
        firstpass_slot_wer: ev
            .firstpass
            .iter()
            .filter_map(|(k, m)| Some((k.clone(), m.slot_wer?.rate)))
            .collect(),
        rows,
    };

    let weights = optimizers
        .iter()
        .map(|o| WeightRow {
            system: o.system.clone(),
            lambda: o.best_lambda,
            gamma: o.best_gamma,
            objective: o.objective,
            dev_wer: o.dev_wer,
            dev_slot_wer: o.dev_slot_wer,
            alternate: o.alternate.clone(),
        })
        .collect();

    Ok(Report {
        ppl,
        classifier,
        wer,
        weights,
        eval_utterances: ev.utterances,
        mean_nbest_size: ev.mean_nbest_size,
    })
}

fn cell(v: Option<&f64>, signed: bool) -> String {
    match v {
        Some(x) if signed => format!("{x:+8.1}%"),
        Some(x) => format!("{x:9.2}"),
        None => format!("{:>9}", "-"),
    }
}

/// Fixed-width text rendering of the report.
pub fn render_text(r: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Table 1. Eval perplexity by domain split (adapted rows relative to general)"
    );
    let _ = write!(out, "{:<10}", "");
    for c in &r.ppl.columns {
        let _ = write!(out, "{c:>10}");
    }
    let _ = writeln!(out);
    for row in &r.ppl.rows {
        let _ = write!(out, "{:<10}", row);
        for c in &r.ppl.columns {
            let v = if row == "genrl" {
                cell(r.ppl.ppl.get(row).and_then(|m| m.get(c)), false)
            } else {
                cell(r.ppl.relative.get(row).and_then(|m| m.get(c)), true)
            };
            let _ = write!(out, " {v}");
        }
        let _ = writeln!(out);
    }

    let _ = writeln!(out, "\nTable 2. Domain classifier on eval transcripts");
    let _ = writeln!(
        out,
        "{:<12}{:>10}{:>10}{:>10}",
        "class", "precision", "recall", "support"
    );
    for c in &r.classifier.classes {
        let _ = writeln!(
            out,
            "{:<12}{:>10.3}{:>10.3}{:>10}",
            c.class, c.precision, c.recall, c.support
        );
    }
    let _ = writeln!(out, "accuracy (max class)      {:.4}", r.classifier.accuracy_max_class);
    let _ = writeln!(
        out,
        "accuracy (threshold {:.2}) {:.4}",
        r.classifier.threshold, r.classifier.accuracy_thresholded
    );

    let _ = writeln!(
        out,
        "\nTable 3. Relative WER / SlotWER change against the first-pass one-best"
    );
    let _ = write!(out, "{:<20}", "");
    for c in &r.wer.columns {
        let _ = write!(out, "{:>10}", format!("WER:{c}"));
    }
    for c in SLOT_SPLITS {
        let _ = write!(out, "{:>10}", format!("Slot:{c}"));
    }
    let _ = writeln!(out);
    let _ = write!(out, "{:<20}", "FirstPass (abs %)");
    for c in &r.wer.columns {
        let _ = write!(
            out,
            " {}",
            cell(r.wer.firstpass_wer.get(c).map(|v| v * 100.0).as_ref(), false)
        );
    }
    for c in SLOT_SPLITS {
        let _ = write!(
            out,
            " {}",
            cell(r.wer.firstpass_slot_wer.get(c).map(|v| v * 100.0).as_ref(), false)
        );
    }
    let _ = writeln!(out);
    for row in &r.wer.rows {
        let _ = write!(out, "{:<20}", row.name);
        for c in &r.wer.columns {
            let _ = write!(out, " {}", cell(row.wer_delta.get(c), true));
        }
        for c in SLOT_SPLITS {
            let _ = write!(out, " {}", cell(row.slot_wer_delta.get(c), true));
        }
        let _ = writeln!(out);
    }

    let _ = writeln!(out, "\nTuned weights (dev set)");
    let _ = writeln!(
        out,
        "{:<12}{:>8}{:>8}{:>10}{:>10}   alternate objective",
        "system", "lambda", "gamma", "WER", "SlotWER"
    );
    for w in &r.weights {
        let _ = writeln!(
            out,
            "{:<12}{:>8.3}{:>8.3}{:>10.4}{:>10.4}   {:?}: lambda {:.3} gamma {:.3} WER {:.4} SlotWER {:.4}",
            w.system,
            w.lambda,
            w.gamma,
            w.dev_wer,
            w.dev_slot_wer,
            w.alternate.objective,
            w.alternate.lambda,
            w.alternate.gamma,
            w.alternate.dev_wer,
            w.alternate.dev_slot_wer
        );
    }
    let _ = writeln!(
        out,
        "\n{} eval utterances, mean n-best size {:.2}",
        r.eval_utterances, r.mean_nbest_size
    );
    out
}
