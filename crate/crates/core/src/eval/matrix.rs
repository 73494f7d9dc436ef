//! The prompt × label-source Dice grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::{binarize, class_dice};
use crate::error::{Error, Result};
use crate::model::{Insertion, PuNet, RaterTag};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::synth::{majority_vote, MultiRaterDataset};
use crate::tensor::Tensor;

/// How a row produces its prediction for one column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Serve {
    /// The model conditioned on one tag.
    Tag(RaterTag),
    /// Strict per-pixel majority of the predictions for several tags.
    Vote(Vec<RaterTag>),
}

impl Serve {
    fn tags(&self) -> Vec<RaterTag> {
        match self {
            Serve::Tag(t) => vec![*t],
            Serve::Vote(ts) => ts.clone(),
        }
    }
}

/// One matrix row: a label, a serving rule per column and a parameter count.
#[derive(Clone, Debug, PartialEq)]
pub struct RowSpec {
    pub label: String,
    /// One entry per column (`Rater 1..R`, then majority vote); `None` is N/A.
    pub columns: Vec<Option<Serve>>,
    pub params: Option<usize>,
}

impl RowSpec {
    pub fn uniform(label: impl Into<String>, serve: Serve, raters: usize, params: Option<usize>) -> Self {
        RowSpec {
            label: label.into(),
            columns: vec![Some(serve); raters + 1],
            params,
        }
    }
}

/// Rows that describe how `net` is meant to be queried.
///
/// A prompted model gets one row per prompt (`P_r1..P_rR`, then `P_c`), a
/// multi-head model one row per head plus the vote of all heads, and a plain
/// model a single row.
pub fn default_rows(net: &PuNet, label: &str, params: Option<usize>) -> Vec<RowSpec> {
    let r = net.raters();
    let raters: Vec<RaterTag> = (1..=r).map(RaterTag::Rater).collect();
    if net.config().insertion != Insertion::None {
        RaterTag::report_order(r)
            .map(|t| {
                let name = match t {
                    RaterTag::Aggregate => format!("{label} P_c"),
                    RaterTag::Rater(j) => format!("{label} P_r{j}"),
                };
                RowSpec::uniform(name, Serve::Tag(t), r, params)
            })
            .collect()
    } else if net.config().seg_heads > 1 {
        let mut rows: Vec<RowSpec> = raters
            .iter()
            .map(|&t| RowSpec::uniform(format!("{label} head {}", t.slot()), Serve::Tag(t), r, params))
            .collect();
        rows.push(RowSpec::uniform(format!("{label} head vote"), Serve::Vote(raters), r, params));
        rows
    } else {
        vec![RowSpec::uniform(label, Serve::Tag(RaterTag::Aggregate), r, params)]
    }
}

/// Mean (disc, cup) Dice per cell; rows are models or prompts, columns are
/// label sources.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: Vec<Vec<Option<[f64; 2]>>>,
    pub params: Vec<Option<usize>>,
}

impl EvalMatrix {
    pub fn columns(raters: usize) -> Vec<String> {
        (1..=raters)
            .map(|j| format!("Rater {j}"))
            .chain(std::iter::once("Majority-voting".to_string()))
            .collect()
    }

    /// Mean of disc and cup Dice of a cell.
    pub fn mean_dice(&self, row: usize, col: usize) -> Option<f64> {
        self.cells.get(row)?.get(col)?.map(|[d, c]| (d + c) / 2.0)
    }

    pub fn row_index(&self, label: &str) -> Option<usize> {
        self.rows.iter().position(|r| r == label)
    }

    /// Stacks the rows of `other` below these.
    pub fn append(&mut self, other: EvalMatrix) -> Result<()> {
        if other.cols != self.cols {
            return Err(Error::Argument("cannot stack matrices with different columns".into()));
        }
        self.rows.extend(other.rows);
        self.cells.extend(other.cells);
        self.params.extend(other.params);
        Ok(())
    }

    /// Long format: one line per cell, six decimals, `NA` for missing cells.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("prompt,gt,dice_disc,dice_cup,trainable_params\n");
        for (i, row) in self.rows.iter().enumerate() {
            let params = self.params[i].map_or("NA".to_string(), |p| p.to_string());
            for (j, col) in self.cols.iter().enumerate() {
                match self.cells[i][j] {
                    Some([d, c]) => writeln!(s, "{row},{col},{d:.6},{c:.6},{params}"),
                    None => writeln!(s, "{row},{col},NA,NA,{params}"),
                }
                .expect("string write");
            }
        }
        s
    }

    /// One row per model, Dice in percent as `disc / cup` per cell.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Method | Params |");
        for c in &self.cols {
            write!(s, " {c} (disc / cup) |").expect("string write");
        }
        s.push_str("\n|---|---:|");
        s.push_str(&"---|".repeat(self.cols.len()));
        s.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let params = self.params[i].map_or("N/A".to_string(), |p| p.to_string());
            write!(s, "| {row} | {params} |").expect("string write");
            for cell in &self.cells[i] {
                match cell {
                    Some([d, c]) => write!(s, " {:.2} / {:.2} |", 100.0 * d, 100.0 * c),
                    None => write!(s, " N/A |"),
                }
                .expect("string write");
            }
            s.push('\n');
        }
        s
    }
}

/// Evaluates every row on every test scene; predictions are binarized at 0.5.
///
/// Scenes are processed in parallel and their Dice values reduced in scene
/// order.
pub fn evaluate_rows<T: Scalar>(
    net: &PuNet,
    store: &ParamStore<T>,
    test: &MultiRaterDataset<T>,
    rows: &[RowSpec],
) -> Result<EvalMatrix> {
    let r = test.raters();
    if r != net.raters() {
        return Err(Error::Config(format!(
            "model expects {} raters, test set has {r}",
            net.raters()
        )));
    }
    let cols = EvalMatrix::columns(r);
    for row in rows {
        if row.columns.len() != cols.len() {
            return Err(Error::Argument(format!(
                "row `{}` serves {} columns, matrix has {}",
                row.label,
                row.columns.len(),
                cols.len()
            )));
        }
    }
    let mut needed: Vec<RaterTag> = rows
        .iter()
        .flat_map(|row| row.columns.iter().flatten().flat_map(Serve::tags))
        .collect();
    needed.sort();
    needed.dedup();
    let gt_tags: Vec<RaterTag> = RaterTag::report_order(r).collect();

    let per_scene: Vec<Vec<Vec<Option<[f64; 2]>>>> = test
        .scenes
        .par_iter()
        .map(|scene| {
            let mut preds: BTreeMap<RaterTag, Tensor<T>> = BTreeMap::new();
            for &t in &needed {
                let logits = net.predict(store, &scene.image, t)?;
                preds.insert(t, binarize(&logits));
            }
            rows.iter()
                .map(|row| {
                    row.columns
                        .iter()
                        .zip(&gt_tags)
                        .map(|(serve, &gt)| {
                            let Some(serve) = serve else { return Ok(None) };
                            let pred = match serve {
                                Serve::Tag(t) => preds[t].clone(),
                                Serve::Vote(ts) => majority_vote(&ts.iter().map(|t| &preds[t]).collect::<Vec<_>>())?,
                            };
                            let d = class_dice(&pred, scene.mask(gt))?;
                            Ok(Some([d[0], d[1]]))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let n = test.len().max(1) as f64;
    let cells = (0..rows.len())
        .map(|i| {
            (0..cols.len())
                .map(|j| {
                    let mut acc: Option<[f64; 2]> = None;
                    for scene in &per_scene {
                        if let Some([d, c]) = scene[i][j] {
                            let a = acc.get_or_insert([0.0, 0.0]);
                            a[0] += d;
                            a[1] += c;
                        }
                    }
                    acc.map(|[d, c]| [d / n, c / n])
                })
                .collect()
        })
        .collect();
    Ok(EvalMatrix {
        rows: rows.iter().map(|r| r.label.clone()).collect(),
        cols,
        cells,
        params: rows.iter().map(|r| r.params).collect(),
    })
}

/// [`evaluate_rows`] with [`default_rows`] and the trainable count of `store`.
pub fn evaluate_matrix<T: Scalar>(
    net: &PuNet,
    store: &ParamStore<T>,
    test: &MultiRaterDataset<T>,
    label: &str,
) -> Result<EvalMatrix> {
    let rows = default_rows(net, label, Some(store.count_trainable()));
    evaluate_rows(net, store, test, &rows)
}
