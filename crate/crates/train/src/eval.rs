//! Greedy generation on a test split, scored with the text metrics.

use log::warn;
use serde::{Deserialize, Serialize};
use tetrad_core::{AssemblyMode, Decoding, Model, ParamStore, Scalar, Tokenizer};
use tetrad_metrics::{EvalReport, ExampleScore};

use crate::prep::Example;

/// `TextOnly` drops every media block, keeping the instruction and input
/// text: a check that scores do not come from the text alone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sanity {
    #[default]
    Full,
    TextOnly,
}

impl std::str::FromStr for Sanity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Sanity::Full),
            "text-only" | "text_only" => Ok(Sanity::TextOnly),
            _ => Err(format!("unknown sanity mode `{s}` (full, text-only)")),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub mode: AssemblyMode,
    pub max_new: usize,
    pub sanity: Sanity,
}

/// Generates for each example and scores against its reference. A failed
/// generation is logged and kept as a failed row.
pub fn evaluate<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    tokenizer: &Tokenizer,
    examples: &[Example],
    label: &str,
    opts: EvalOptions,
) -> EvalReport {
    let rows = examples
        .iter()
        .map(|ex| {
            let inputs = match opts.sanity {
                Sanity::Full => ex.inputs.clone(),
                Sanity::TextOnly => ex.inputs.text_only(),
            };
            match model.generate(store, &inputs, &ex.query, opts.mode, opts.max_new, Decoding::Greedy) {
                Ok(ids) => ExampleScore::score(&ex.id, &tokenizer.decode(&ids), &ex.reference, None),
                Err(e) => {
                    warn!("{label}: generation failed for {}: {e}", ex.id);
                    ExampleScore::failed(&ex.id, &ex.reference, e.to_string())
                }
            }
        })
        .collect();
    EvalReport::new(label, rows, None)
}
