//! Majority vote and the logistic meta-model over base predictions.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::corpus::{DocSet, Part, Polarity, Provenance};
use crate::error::{Error, Result};
use crate::eval::compute_metrics;
use crate::linear::{linear_predict, lr_train, LinearModel, LrParams};

/// A trained classifier that can take part in a combination.
pub trait BaseClassifier: Send + Sync {
    fn id(&self) -> &str;

    /// Split and part of the documents this classifier was trained on.
    fn provenance(&self) -> Provenance;

    fn predict(&self, tokens: &[String]) -> Result<Polarity>;

    fn predict_all(&self, docs: &[&[String]]) -> Result<Vec<Polarity>> {
        docs.par_iter().map(|d| self.predict(d)).collect()
    }
}

/// Majority of the bits; an exact tie goes to positive.
pub fn vote_all(bits: &[u8]) -> Result<Polarity> {
    if bits.is_empty() {
        return Err(Error::EmptyVote);
    }
    let ones = bits.iter().filter(|&&b| b != 0).count();
    Ok(Polarity::from_bit(2 * ones >= bits.len()))
}

/// Row-per-document bit matrix: `bits[d][i]` is base `i`'s prediction for
/// document `d`.
pub fn prediction_vectors(columns: &[Vec<Polarity>]) -> Result<Vec<Vec<u8>>> {
    let n = columns.first().map_or(0, Vec::len);
    if let Some(c) = columns.iter().find(|c| c.len() != n) {
        return Err(Error::LengthMismatch {
            left: n,
            right: c.len(),
        });
    }
    Ok((0..n)
        .map(|d| columns.iter().map(|c| c[d].bit()).collect())
        .collect())
}

fn check_trained_on_train(base: &dyn BaseClassifier, split_id: u64) -> Result<()> {
    let p = base.provenance();
    if p.part != Part::Train {
        return Err(Error::Provenance(format!(
            "base `{}` was trained on the {} part",
            base.id(),
            p.part
        )));
    }
    if p.split_id != split_id {
        return Err(Error::Provenance(format!(
            "base `{}` comes from split {:#x}, expected {:#x}",
            base.id(),
            p.split_id,
            split_id
        )));
    }
    Ok(())
}

/// Predictions of several bases on one document set, with the set's labels
/// and provenance. Only [`predict_table`] builds one, after checking that
/// every base was trained on the train part of the same split.
#[derive(Debug, Clone)]
pub struct PredictionTable {
    provenance: Provenance,
    base_ids: Vec<String>,
    columns: Vec<Vec<Polarity>>,
    labels: Vec<Polarity>,
}

/// Runs every base over `docs`; bases run one after another, documents in
/// parallel.
pub fn predict_table(bases: &[&dyn BaseClassifier], docs: &DocSet) -> Result<PredictionTable> {
    if docs.provenance.part == Part::Train {
        return Err(Error::Provenance(
            "combinations are never evaluated on the train part".into(),
        ));
    }
    for b in bases {
        check_trained_on_train(*b, docs.provenance.split_id)?;
    }
    let tokens = docs.tokens();
    let columns = bases
        .iter()
        .map(|b| b.predict_all(&tokens))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionTable {
        provenance: docs.provenance,
        base_ids: bases.iter().map(|b| b.id().to_string()).collect(),
        columns,
        labels: docs.labels(),
    })
}

impl PredictionTable {
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn base_ids(&self) -> &[String] {
        &self.base_ids
    }

    pub fn labels(&self) -> &[Polarity] {
        &self.labels
    }

    pub fn column(&self, id: &str) -> Option<&[Polarity]> {
        let i = self.base_ids.iter().position(|b| b == id)?;
        Some(&self.columns[i])
    }

    pub fn columns(&self) -> &[Vec<Polarity>] {
        &self.columns
    }

    /// The prediction vector of every document.
    pub fn bits(&self) -> Vec<Vec<u8>> {
        prediction_vectors(&self.columns).expect("columns share the document count")
    }

    /// The columns of `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let columns = ids
            .iter()
            .map(|id| {
                self.column(id)
                    .map(<[Polarity]>::to_vec)
                    .ok_or_else(|| Error::BaseMismatch(format!("no predictions for base `{id}`")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            provenance: self.provenance,
            base_ids: ids.to_vec(),
            columns,
            labels: self.labels.clone(),
        })
    }

    /// Majority vote per document.
    pub fn vote(&self) -> Result<Vec<Polarity>> {
        self.bits().iter().map(|row| vote_all(row)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackModel {
    pub base_ids: Vec<String>,
    /// Logistic model over the bits, in `base_ids` order.
    pub meta: LinearModel,
    pub split_id: u64,
}

fn as_features(bits: &[Vec<u8>]) -> Vec<Vec<f64>> {
    bits.iter()
        .map(|row| row.iter().map(|&b| b as f64).collect())
        .collect()
}

/// Fits the meta-model on prediction vectors without provenance checks.
pub fn fit_meta(
    base_ids: Vec<String>,
    bits: &[Vec<u8>],
    labels: &[Polarity],
    split_id: u64,
    params: &LrParams,
) -> Result<StackModel> {
    if let Some(row) = bits.iter().find(|r| r.len() != base_ids.len()) {
        return Err(Error::DimensionMismatch {
            expected: base_ids.len(),
            got: row.len(),
        });
    }
    let meta = lr_train(&as_features(bits), labels, params)?;
    Ok(StackModel {
        base_ids,
        meta,
        split_id,
    })
}

/// Fits the meta-model on a table of validation predictions.
pub fn train_lr_all_table(table: &PredictionTable, params: &LrParams) -> Result<StackModel> {
    if table.provenance.part != Part::Validate {
        return Err(Error::Provenance(format!(
            "meta-model must be fitted on the validate part, got {}",
            table.provenance.part
        )));
    }
    if table.base_ids.is_empty() {
        return Err(Error::EmptyVote);
    }
    fit_meta(
        table.base_ids.clone(),
        &table.bits(),
        &table.labels,
        table.provenance.split_id,
        params,
    )
}

/// Predicts the validation part with every base and fits the logistic
/// meta-model to those predictions. Bases must have been trained on the
/// train part of the same split.
pub fn train_lr_all(
    bases: &[&dyn BaseClassifier],
    validate: &DocSet,
    params: &LrParams,
) -> Result<StackModel> {
    if validate.provenance.part != Part::Validate {
        return Err(Error::Provenance(format!(
            "meta-model must be fitted on the validate part, got {}",
            validate.provenance.part
        )));
    }
    train_lr_all_table(&predict_table(bases, validate)?, params)
}

impl StackModel {
    /// Meta decision for one prediction vector; probability ½ is positive.
    pub fn predict_bits(&self, bits: &[u8]) -> Result<Polarity> {
        let x: Vec<f64> = bits.iter().map(|&b| b as f64).collect();
        linear_predict(&self.meta, &x)
    }

    /// Meta decisions for a table whose bases match `base_ids` in order.
    pub fn predict_table(&self, table: &PredictionTable) -> Result<Vec<Polarity>> {
        if table.base_ids != self.base_ids {
            return Err(Error::BaseMismatch(format!(
                "expected bases [{}], got [{}]",
                self.base_ids.join(", "),
                table.base_ids.join(", ")
            )));
        }
        if table.provenance.split_id != self.split_id {
            return Err(Error::Provenance(format!(
                "predictions come from split {:#x}, the meta-model from {:#x}",
                table.provenance.split_id, self.split_id
            )));
        }
        table
            .bits()
            .iter()
            .map(|row| self.predict_bits(row))
            .collect()
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "stack {} {}", self.base_ids.len(), self.split_id)?;
        writeln!(out, "{}", self.base_ids.join(" "))?;
        self.meta.write_text(out)
    }

    pub fn read_text<R: BufRead>(mut input: R) -> Result<Self> {
        let mut head = String::new();
        input.read_line(&mut head)?;
        let mut parts = head.split_whitespace();
        if parts.next() != Some("stack") {
            return Err(Error::Parse("missing `stack` header".into()));
        }
        let bad = || Error::Parse(format!("bad stack header `{}`", head.trim()));
        let n: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let split_id: u64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let mut ids = String::new();
        input.read_line(&mut ids)?;
        let base_ids: Vec<String> = ids.split_whitespace().map(str::to_string).collect();
        if base_ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: base_ids.len(),
            });
        }
        let meta = LinearModel::read_text(input)?;
        Ok(Self {
            base_ids,
            meta,
            split_id,
        })
    }
}

/// Runs every base on `docs` and lets the meta-model decide.
pub fn stack_predict(
    model: &StackModel,
    bases: &[&dyn BaseClassifier],
    docs: &DocSet,
) -> Result<Vec<Polarity>> {
    let ids: Vec<&str> = bases.iter().map(|b| b.id()).collect();
    if ids
        != model
            .base_ids
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
    {
        return Err(Error::BaseMismatch(format!(
            "expected bases [{}], got [{}]",
            model.base_ids.join(", "),
            ids.join(", ")
        )));
    }
    model.predict_table(&predict_table(bases, docs)?)
}

/// One bit per line, for auditing prediction lists.
pub fn write_prediction_list<W: Write>(mut out: W, predictions: &[Polarity]) -> Result<()> {
    for p in predictions {
        writeln!(out, "{}", p.bit())?;
    }
    Ok(())
}

/// Greedy forward selection of base columns.
///
/// Even-indexed validation rows fit the meta-model and odd-indexed rows score
/// it by Macro F1. Each step adds the column with the best score (earlier
/// columns win ties); selection stops at `max_k` columns or when the best
/// addition improves the score by no more than `1e-4`.
pub fn select_subset(
    columns: &[Vec<Polarity>],
    labels: &[Polarity],
    max_k: usize,
    params: &LrParams,
) -> Result<Vec<usize>> {
    if columns.len() < 2 {
        return Err(Error::Empty("subset selection needs at least two bases"));
    }
    let bits = prediction_vectors(columns)?;
    if bits.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: bits.len(),
            right: labels.len(),
        });
    }
    let fit_rows: Vec<usize> = (0..bits.len()).step_by(2).collect();
    let eval_rows: Vec<usize> = (1..bits.len()).step_by(2).collect();
    let fit_labels: Vec<Polarity> = fit_rows.iter().map(|&r| labels[r]).collect();
    let eval_labels: Vec<Polarity> = eval_rows.iter().map(|&r| labels[r]).collect();

    let score = |subset: &[usize]| -> Result<f64> {
        let pick = |rows: &[usize]| -> Vec<Vec<u8>> {
            rows.iter()
                .map(|&r| subset.iter().map(|&c| bits[r][c]).collect())
                .collect()
        };
        let ids = subset.iter().map(|c| c.to_string()).collect();
        let model = fit_meta(ids, &pick(&fit_rows), &fit_labels, 0, params)?;
        let pred = pick(&eval_rows)
            .iter()
            .map(|row| model.predict_bits(row))
            .collect::<Result<Vec<_>>>()?;
        Ok(compute_metrics(&pred, &eval_labels)?.macro_f1)
    };

    let mut chosen: Vec<usize> = Vec::new();
    let mut current = f64::NEG_INFINITY;
    while chosen.len() < max_k.min(columns.len()) {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..columns.len() {
            if chosen.contains(&c) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(c);
            let s = score(&trial)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c, s));
            }
        }
        let Some((c, s)) = best else { break };
        if !chosen.is_empty() && s - current <= 1e-4 {
            break;
        }
        chosen.push(c);
        current = s;
    }
    Ok(chosen)
}

/// [`select_subset`] over a validation table; returns the chosen base ids in
/// selection order.
pub fn select_base_subset(
    table: &PredictionTable,
    max_k: usize,
    params: &LrParams,
) -> Result<Vec<String>> {
    if table.provenance.part != Part::Validate {
        return Err(Error::Provenance(format!(
            "subsets are selected on the validate part, got {}",
            table.provenance.part
        )));
    }
    Ok(select_subset(&table.columns, &table.labels, max_k, params)?
        .into_iter()
        .map(|i| table.base_ids[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabeledDoc;
    use Polarity::{Negative as N, Positive as P};

    /// Predicts from a fixed token lookup.
    struct Oracle {
        id: String,
        provenance: Provenance,
        rule: fn(&[String]) -> Polarity,
    }

    impl BaseClassifier for Oracle {
        fn id(&self) -> &str {
            &self.id
        }
        fn provenance(&self) -> Provenance {
            self.provenance
        }
        fn predict(&self, tokens: &[String]) -> Result<Polarity> {
            Ok((self.rule)(tokens))
        }
    }

    fn prov(part: Part) -> Provenance {
        Provenance { split_id: 7, part }
    }

    fn base(id: &str, part: Part, rule: fn(&[String]) -> Polarity) -> Oracle {
        Oracle {
            id: id.into(),
            provenance: prov(part),
            rule,
        }
    }

    fn doc(tok: &str, label: Polarity) -> LabeledDoc {
        LabeledDoc {
            tokens: vec![tok.to_string()],
            label,
        }
    }

    fn validate_set() -> DocSet {
        let mut docs = Vec::new();
        for _ in 0..10 {
            docs.push(doc("a+", P));
            docs.push(doc("a-", N));
            docs.push(doc("b-", N));
            docs.push(doc("b+", P));
        }
        DocSet {
            provenance: prov(Part::Validate),
            docs,
        }
    }

    // Sees only "a" documents; says positive otherwise.
    fn sees_a(t: &[String]) -> Polarity {
        Polarity::from_bit(t[0] != "a-")
    }

    fn sees_b(t: &[String]) -> Polarity {
        Polarity::from_bit(t[0] != "b-")
    }

    fn truth(t: &[String]) -> Polarity {
        Polarity::from_bit(t[0].ends_with('+'))
    }

    #[test]
    fn votes() {
        assert_eq!(vote_all(&[0, 0, 1, 0, 1, 0, 0, 1, 0]).unwrap(), N);
        assert_eq!(vote_all(&[1]).unwrap(), P);
        assert_eq!(vote_all(&[0, 1]).unwrap(), P);
        assert!(matches!(vote_all(&[]), Err(Error::EmptyVote)));
    }

    #[test]
    fn complementary_bases_combine() {
        let a = base("a", Part::Train, sees_a);
        let b = base("b", Part::Train, sees_b);
        let val = validate_set();
        let bases: [&dyn BaseClassifier; 2] = [&a, &b];
        let stack = train_lr_all(&bases, &val, &LrParams::default()).unwrap();
        let pred = stack_predict(&stack, &bases, &val).unwrap();
        let meta = compute_metrics(&pred, &val.labels()).unwrap().macro_f1;
        let single = compute_metrics(&a.predict_all(&val.tokens()).unwrap(), &val.labels())
            .unwrap()
            .macro_f1;
        assert!(meta > single);
        assert_eq!(meta, 1.0);
    }

    #[test]
    fn provenance_is_enforced() {
        let leaked = base("a", Part::Validate, sees_a);
        let val = validate_set();
        assert!(matches!(
            train_lr_all(&[&leaked], &val, &LrParams::default()),
            Err(Error::Provenance(_))
        ));
        let ok = base("a", Part::Train, sees_a);
        let mut wrong_part = val.clone();
        wrong_part.provenance.part = Part::Test;
        assert!(train_lr_all(&[&ok], &wrong_part, &LrParams::default()).is_err());
    }

    #[test]
    fn order_is_checked() {
        let a = base("a", Part::Train, sees_a);
        let b = base("b", Part::Train, sees_b);
        let val = validate_set();
        let stack = train_lr_all(&[&a, &b], &val, &LrParams::default()).unwrap();
        assert!(matches!(
            stack_predict(&stack, &[&b, &a], &val),
            Err(Error::BaseMismatch(_))
        ));
    }

    #[test]
    fn permuting_bases_with_weights() {
        let a = base("a", Part::Train, sees_a);
        let b = base("b", Part::Train, sees_b);
        let val = validate_set();
        let stack = train_lr_all(&[&a, &b], &val, &LrParams::default()).unwrap();
        let mut swapped = stack.clone();
        swapped.base_ids.reverse();
        swapped.meta.w.reverse();
        assert_eq!(
            stack_predict(&stack, &[&a, &b], &val).unwrap(),
            stack_predict(&swapped, &[&b, &a], &val).unwrap()
        );
    }

    #[test]
    fn single_base_passthrough() {
        let a = base("a", Part::Train, sees_a);
        let val = validate_set();
        let stack = train_lr_all(&[&a], &val, &LrParams::default()).unwrap();
        let meta = stack_predict(&stack, &[&a], &val).unwrap();
        let direct = a.predict_all(&val.tokens()).unwrap();
        let acc = |p: &[Polarity]| {
            p.iter()
                .zip(val.labels())
                .filter(|(x, y)| **x == *y)
                .count()
        };
        assert_eq!(acc(&meta), acc(&direct));
    }

    #[test]
    fn identical_bases_agree() {
        let a = base("a", Part::Train, truth);
        let b = base("b", Part::Train, truth);
        let val = validate_set();
        let stack = train_lr_all(&[&a, &b], &val, &LrParams::default()).unwrap();
        for d in &val.docs {
            let bits = [
                a.predict(&d.tokens).unwrap().bit(),
                b.predict(&d.tokens).unwrap().bit(),
            ];
            assert_eq!(stack.predict_bits(&bits).unwrap(), d.label);
            assert_eq!(vote_all(&bits).unwrap(), d.label);
        }
    }

    #[test]
    fn subset_prefers_the_perfect_base() {
        let val = validate_set();
        let perfect = base("perfect", Part::Train, truth);
        let noise = base("noise", Part::Train, |t| {
            Polarity::from_bit(t[0].starts_with('a'))
        });
        let table = predict_table(&[&noise, &perfect], &val).unwrap();
        let picked = select_base_subset(&table, 2, &LrParams::default()).unwrap();
        assert_eq!(picked, vec!["perfect".to_string()]);
        let one = select_base_subset(&table, 1, &LrParams::default()).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn tables_select_and_vote() {
        let a = base("a", Part::Train, sees_a);
        let b = base("b", Part::Train, sees_b);
        let c = base("c", Part::Train, truth);
        let val = validate_set();
        let table = predict_table(&[&a, &b, &c], &val).unwrap();
        assert_eq!(table.labels(), val.labels().as_slice());
        let votes = table.vote().unwrap();
        assert_eq!(votes, val.labels());
        let sub = table.select(&["c".to_string(), "a".to_string()]).unwrap();
        assert_eq!(sub.column("c").unwrap(), table.column("c").unwrap());
        assert_eq!(sub.bits()[1], vec![0, 0]);
        assert!(table.select(&["zzz".to_string()]).is_err());
        let mut train_part = val.clone();
        train_part.provenance.part = Part::Train;
        assert!(predict_table(&[&a], &train_part).is_err());
    }

    #[test]
    fn text_round_trip() {
        let a = base("a", Part::Train, sees_a);
        let b = base("b", Part::Train, sees_b);
        let stack = train_lr_all(&[&a, &b], &validate_set(), &LrParams::default()).unwrap();
        let mut buf = Vec::new();
        stack.write_text(&mut buf).unwrap();
        assert_eq!(StackModel::read_text(buf.as_slice()).unwrap(), stack);
    }
}
