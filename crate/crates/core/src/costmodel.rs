//! Token estimation, per-tier pricing and the baseline-vs-guarded cost ledger.
//!
//! Every ratio produced by the guard (compression ratio, reduction, OpEx
//! savings) is computed with [`estimate_tokens`] on both sides, so the numbers
//! are independent of any particular provider tokenizer.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of the token counting rule, recorded in reports.
pub const TOKEN_RULE: &str = "utf8-bytes/4 (ceil), v1";

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("price table has no entry for `{0}`")]
    UnknownTier(String),
    #[error("price for `{key}` must be non-negative, got {value}")]
    NegativePrice { key: String, value: f64 },
    #[error("ledger is empty")]
    EmptyLedger,
}

/// Approximate token count: `ceil(utf8_len / 4)`.
///
/// Close enough to common subword tokenizers for English prose and logs.
pub fn estimate_tokens(text: &str) -> u64 {
    tokens_for_bytes(text.len())
}

pub(crate) fn tokens_for_bytes(len: usize) -> u64 {
    (len as u64).div_ceil(4)
}

/// Prices per 1k tokens for one tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Price {
    #[serde(default)]
    pub input_per_1k: f64,
    #[serde(default)]
    pub output_per_1k: f64,
    /// Local tiers never incur cloud cost regardless of the listed prices.
    #[serde(default)]
    pub local: bool,
}

impl Price {
    pub fn cloud(input_per_1k: f64, output_per_1k: f64) -> Self {
        Self {
            input_per_1k,
            output_per_1k,
            local: false,
        }
    }

    pub fn local() -> Self {
        Self {
            input_per_1k: 0.0,
            output_per_1k: 0.0,
            local: true,
        }
    }
}

/// Price table keyed by `price_ref` (the key each tier policy points at).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable {
    entries: BTreeMap<String, Price>,
}

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, price: Price) -> Self {
        self.insert(key, price);
        self
    }

    pub fn insert(&mut self, key: impl Into<String>, price: Price) {
        self.entries.insert(key.into(), price);
    }

    pub fn get(&self, key: &str) -> Option<&Price> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        for (key, p) in &self.entries {
            for value in [p.input_per_1k, p.output_per_1k] {
                if value.is_nan() || value < 0.0 {
                    return Err(CostError::NegativePrice {
                        key: key.clone(),
                        value,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Monetary cost of one call at the tier behind `price_ref`.
pub fn price(
    tokens_in: u64,
    tokens_out: u64,
    price_ref: &str,
    table: &PriceTable,
) -> Result<f64, CostError> {
    let p = table
        .get(price_ref)
        .ok_or_else(|| CostError::UnknownTier(price_ref.to_string()))?;
    if p.local {
        return Ok(0.0);
    }
    Ok(tokens_in as f64 / 1000.0 * p.input_per_1k + tokens_out as f64 / 1000.0 * p.output_per_1k)
}

/// One request in the cost ledger. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub baseline_input_tokens: u64,
    pub guarded_input_tokens: u64,
    pub output_tokens: u64,
    pub baseline_cost: f64,
    pub guarded_cost: f64,
    pub delta: f64,
    pub quadrant: String,
}

impl LedgerRow {
    pub fn new(
        baseline_input_tokens: u64,
        guarded_input_tokens: u64,
        output_tokens: u64,
        baseline_cost: f64,
        guarded_cost: f64,
        quadrant: impl Into<String>,
    ) -> Self {
        Self {
            baseline_input_tokens,
            guarded_input_tokens,
            output_tokens,
            baseline_cost,
            guarded_cost,
            delta: baseline_cost - guarded_cost,
            quadrant: quadrant.into(),
        }
    }
}

/// Append-only ledger of request costs.
#[derive(Debug, Clone, Default)]
pub struct CostLedger {
    rows: Vec<LedgerRow>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, row: LedgerRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[LedgerRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_ledger_csv(&self.rows, out)
    }
}

pub fn write_ledger_csv<W: Write>(rows: &[LedgerRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(std::io::Error::other)?;
    }
    if rows.is_empty() {
        w.write_record([
            "baseline_input_tokens",
            "guarded_input_tokens",
            "output_tokens",
            "baseline_cost",
            "guarded_cost",
            "delta",
            "quadrant",
        ])
        .map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Cost reduction as a fraction of the baseline spend (0.5 = 50%).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Parsimony {
    pub blended: f64,
    pub per_quadrant: BTreeMap<String, f64>,
}

/// `Σdelta / Σbaseline_cost`, overall and grouped by quadrant tag.
pub fn parsimony(rows: &[LedgerRow]) -> Result<Parsimony, CostError> {
    if rows.is_empty() {
        return Err(CostError::EmptyLedger);
    }
    let mut groups: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let (mut delta, mut base) = (0.0, 0.0);
    for row in rows {
        delta += row.delta;
        base += row.baseline_cost;
        let g = groups.entry(row.quadrant.clone()).or_default();
        g.0 += row.delta;
        g.1 += row.baseline_cost;
    }
    Ok(Parsimony {
        blended: ratio(delta, base),
        per_quadrant: groups
            .into_iter()
            .map(|(q, (d, b))| (q, ratio(d, b)))
            .collect(),
    })
}

fn ratio(delta: f64, base: f64) -> f64 {
    if base > 0.0 {
        delta / base
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> PriceTable {
        PriceTable::new()
            .with("tier1", Price::cloud(0.005, 0.015))
            .with("local", Price::local())
    }

    #[test]
    fn token_estimates() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens(&"a".repeat(4000)), 1000);
        assert_eq!(estimate_tokens("0123456789"), 3);
        // multi-byte characters count by bytes
        assert_eq!(estimate_tokens("é"), 1);
    }

    #[test]
    fn pricing() {
        let t = table();
        assert_eq!(price(0, 0, "tier1", &t).unwrap(), 0.0);
        let c = price(11_300, 200, "tier1", &t).unwrap();
        assert!((c - 0.0595).abs() < 1e-12, "{c}");
        assert_eq!(price(1_000_000, 5_000, "local", &t).unwrap(), 0.0);
        assert_eq!(
            price(1, 1, "tier9", &t),
            Err(CostError::UnknownTier("tier9".into()))
        );
    }

    #[test]
    fn negative_price_rejected() {
        let t = PriceTable::new().with("x", Price::cloud(-1.0, 0.0));
        assert!(matches!(t.validate(), Err(CostError::NegativePrice { .. })));
    }

    #[test]
    fn parsimony_arithmetic() {
        let rows = vec![LedgerRow::new(10, 5, 0, 10.0, 5.0, "lazy/personal")];
        let p = parsimony(&rows).unwrap();
        assert!((p.blended - 0.5).abs() < 1e-12);

        let same = vec![
            LedgerRow::new(10, 10, 1, 3.0, 3.0, "a"),
            LedgerRow::new(20, 20, 1, 7.0, 7.0, "b"),
        ];
        let p = parsimony(&same).unwrap();
        assert_eq!(p.blended, 0.0);
        assert_eq!(p.per_quadrant["a"], 0.0);

        assert_eq!(parsimony(&[]), Err(CostError::EmptyLedger));
    }

    #[test]
    fn csv_column_order() {
        let mut ledger = CostLedger::new();
        ledger.append(LedgerRow::new(
            100,
            40,
            10,
            1.0,
            0.25,
            "expert/institutional",
        ));
        let mut buf = Vec::new();
        ledger.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "baseline_input_tokens,guarded_input_tokens,output_tokens,baseline_cost,guarded_cost,delta,quadrant"
        );
        assert_eq!(
            lines.next().unwrap(),
            "100,40,10,1.0,0.25,0.75,expert/institutional"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn estimate_is_monotone(a in ".{0,200}", b in ".{0,200}") {
                let joined = format!("{a}{b}");
                prop_assert!(estimate_tokens(&a) <= estimate_tokens(&joined));
            }
        }
    }
}
