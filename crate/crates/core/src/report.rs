//! Text rendering of evaluation results: an aligned table for people and a
//! `key = value` block per run for scripts.

use std::fmt::Write;

use crate::episodes::{EvalReport, TIE_BREAK};
use crate::head::TauFit;

/// Published accuracies of the full method with a meta-trained ResNet-12
/// backbone. They are context only; the toy extractor is not expected to
/// approach them.
pub const PUBLISHED_REFERENCE: &[&str] = &[
    "miniImageNet 5-way 1-shot 67.01 +- 0.28",
    "miniImageNet 5-way 5-shot 83.33 +- 0.19",
    "CUB 5-way 1-shot 75.78 +- 0.27",
];

fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn render_reports(title: &str, reports: &[EvalReport]) -> String {
    let mut out = String::new();
    writeln!(out, "# {title}").unwrap();
    writeln!(out, "# tie-break: {TIE_BREAK}").unwrap();
    writeln!(
        out,
        "{:<22} {:>4} {:>5} {:>6} {:>9} {:>9} {:>9}",
        "run", "way", "shot", "query", "episodes", "mean", "ci95"
    )
    .unwrap();
    for r in reports {
        let s = &r.settings;
        writeln!(
            out,
            "{:<22} {:>4} {:>5} {:>6} {:>9} {:>9.4} {:>9.4}",
            r.label,
            s.n_way,
            s.k_shot,
            s.q_queries,
            r.num_episodes(),
            r.mean_accuracy,
            r.ci95
        )
        .unwrap();
    }
    for r in reports {
        let s = &r.settings;
        let h = &s.head;
        let e = &s.extractor;
        writeln!(out).unwrap();
        writeln!(out, "[run {}]", r.label).unwrap();
        let strides: Vec<String> = e.strides.iter().map(usize::to_string).collect();
        let kv: [(&str, String); 22] = [
            ("label", r.label.clone()),
            ("n_way", s.n_way.to_string()),
            ("k_shot", s.k_shot.to_string()),
            ("q_queries", s.q_queries.to_string()),
            ("num_episodes", r.num_episodes().to_string()),
            ("seed", s.seed.to_string()),
            ("k", h.k.to_string()),
            ("tau", format!("{:?}", h.tau)),
            ("omega", format!("{:?}", h.omega)),
            ("use_weight", h.use_weight.to_string()),
            ("use_pow", h.use_pow.to_string()),
            ("use_protoaug", h.use_protoaug.to_string()),
            ("multiscale_queries", h.multiscale_queries.to_string()),
            ("scales", s.scales.describe()),
            ("extractor_seed", e.seed.to_string()),
            ("extractor_dim", e.out_dim.to_string()),
            ("extractor_strides", strides.join(",")),
            ("episode_stream", format!("{:016x}", r.stream_digest)),
            ("mean_accuracy", format!("{:?}", r.mean_accuracy)),
            ("ci95", format!("{:?}", r.ci95)),
            ("ci95_formula", "1.96*std/sqrt(num_episodes)".into()),
            ("episode_accuracies", join_f64(&r.episode_accuracies)),
        ];
        for (key, value) in kv {
            writeln!(out, "{key} = {value}").unwrap();
        }
    }
    writeln!(out).unwrap();
    writeln!(
        out,
        "# published reference (meta-trained ResNet-12 backbone, not reproduced at this scale):"
    )
    .unwrap();
    for line in PUBLISHED_REFERENCE {
        writeln!(out, "#   {line}").unwrap();
    }
    out
}

pub fn render_tau_fit(fit: &TauFit, initial_tau: f64, learning_rate: f64) -> String {
    let mut out = String::new();
    writeln!(out, "# temperature fit").unwrap();
    writeln!(out, "{:>6} {:>14}", "step", "loss").unwrap();
    for (i, loss) in fit.losses.iter().enumerate() {
        writeln!(out, "{i:>6} {loss:>14.8}").unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "[fit]").unwrap();
    writeln!(out, "initial_tau = {initial_tau:?}").unwrap();
    writeln!(out, "learning_rate = {learning_rate:?}").unwrap();
    writeln!(out, "steps = {}", fit.losses.len() - 1).unwrap();
    writeln!(out, "final_tau = {:?}", fit.tau).unwrap();
    writeln!(out, "initial_loss = {:?}", fit.losses[0]).unwrap();
    writeln!(out, "final_loss = {:?}", fit.losses[fit.losses.len() - 1]).unwrap();
    out
}

/// Extracts `key = value` pairs from the block of the named run.
pub fn parse_run_block(text: &str, label: &str) -> Option<Vec<(String, String)>> {
    let header = format!("[run {label}]");
    let mut lines = text.lines().skip_while(|l| l.trim() != header);
    lines.next()?;
    Some(
        lines
            .take_while(|l| !l.trim().is_empty())
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_owned(), v.to_owned()))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{mean_ci95, EvalSettings};

    fn report(label: &str, accs: Vec<f64>) -> EvalReport {
        let (mean_accuracy, ci95) = mean_ci95(&accs);
        EvalReport {
            label: label.into(),
            settings: EvalSettings::default(),
            episode_accuracies: accs,
            mean_accuracy,
            ci95,
            stream_digest: 0xabc,
        }
    }

    #[test]
    fn table_and_blocks() {
        let text = render_reports("eval", &[report("full", vec![0.2, 0.4]), report("baseline", vec![0.1])]);
        assert!(text.contains(TIE_BREAK));
        assert!(text.contains("67.01"));
        let block = parse_run_block(&text, "full").unwrap();
        let get = |k: &str| block.iter().find(|(key, _)| key == k).unwrap().1.clone();
        assert_eq!(get("episode_accuracies"), "0.2,0.4");
        assert_eq!(get("episode_stream"), "0000000000000abc");
        let mean: f64 = get("mean_accuracy").parse().unwrap();
        assert!((mean - 0.3).abs() < 1e-15);
        assert!(parse_run_block(&text, "weight").is_none());
    }
}
