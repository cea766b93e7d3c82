//! CART trees, random forests, AdaBoost and gradient tree boosting over
//! dense feature vectors.

mod adaboost;
mod forest;
mod gbt;
mod tree;

use std::io::BufRead;
use std::str::FromStr;

pub use adaboost::{adaboost_train, AdaBoostFit, AdaBoostModel, AdaBoostParams};
pub use forest::{rf_train, ForestModel, RfParams};
pub use gbt::{gbt_train, GbtFit, GbtModel, GbtParams};
pub use tree::{tree_train, tree_train_weighted, DecisionTree, Node, TrainingSet, TreeParams};

use crate::error::{Error, Result};

/// Line reader shared by the text model formats.
pub(crate) struct Lines<'a> {
    inner: std::io::Lines<Box<dyn BufRead + 'a>>,
}

impl<'a> Lines<'a> {
    pub(crate) fn new<R: BufRead + 'a>(input: R) -> Self {
        let boxed: Box<dyn BufRead + 'a> = Box::new(input);
        Self {
            inner: boxed.lines(),
        }
    }

    pub(crate) fn next_line(&mut self) -> Result<String> {
        self.inner
            .next()
            .ok_or_else(|| Error::Parse("model file ends early".into()))?
            .map_err(Error::from)
    }

    pub(crate) fn parse_field<T: FromStr>(&self, field: Option<&str>) -> Result<T> {
        let field = field.ok_or_else(|| Error::Parse("missing field".into()))?;
        field
            .parse()
            .map_err(|_| Error::Parse(format!("bad field `{field}`")))
    }
}

/// Reads `<tag> <fields…>` and returns the fields.
pub(crate) fn expect_header(lines: &mut Lines<'_>, tag: &str) -> Result<Vec<String>> {
    let line = lines.next_line()?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(Error::Parse(format!(
            "expected `{tag}` header, got `{line}`"
        )));
    }
    Ok(parts.map(str::to_string).collect())
}
