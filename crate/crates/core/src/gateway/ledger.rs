//! Per-iteration cost and time accounting.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CallTag, CompletionResponse, ModelSpec, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub iteration: u32,
    pub stage: Stage,
    pub item: String,
    pub attempt: u32,
    pub request_hash: String,
    pub model_id: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
    pub latency_secs: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationCost {
    /// `c_i`: sum of call costs.
    pub cost: f64,
    /// Sum of per-call latencies.
    pub latency_secs: f64,
    /// Stage wall time, when measured.
    pub wall_secs: f64,
    pub calls: usize,
}

impl IterationCost {
    /// `t_i` in minutes: wall time when measured, else summed call latency.
    pub fn minutes(&self) -> f64 {
        if self.wall_secs > 0.0 {
            self.wall_secs / 60.0
        } else {
            self.latency_secs / 60.0
        }
    }
}

/// Cost ledger keyed by 1-based iteration number.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    iterations: BTreeMap<u32, IterationCost>,
    calls: Vec<CallRecord>,
}

pub fn call_cost(response: &CompletionResponse, model: &ModelSpec) -> f64 {
    response.input_tokens as f64 * model.price_in / 1e6 + response.output_tokens as f64 * model.price_out / 1e6
}

/// Add one response to iteration `iteration`; returns the call cost.
pub fn record_cost(ledger: &mut CostLedger, response: &CompletionResponse, model: &ModelSpec, iteration: u32) -> f64 {
    ledger.record_call(&CallTag::new(iteration, Stage::Annotate), "", model, response)
}

impl CostLedger {
    pub fn record_call(&mut self, tag: &CallTag, hash: &str, model: &ModelSpec, response: &CompletionResponse) -> f64 {
        let cost = call_cost(response, model);
        let it = self.iterations.entry(tag.iteration).or_default();
        it.cost += cost;
        it.latency_secs += response.latency_secs;
        it.calls += 1;
        self.calls.push(CallRecord {
            iteration: tag.iteration,
            stage: tag.stage,
            item: tag.item.clone(),
            attempt: tag.attempt,
            request_hash: hash.to_owned(),
            model_id: model.model_id.clone(),
            input_tokens: response.input_tokens,
            output_tokens: response.output_tokens,
            cost,
            latency_secs: response.latency_secs,
        });
        cost
    }

    pub fn add_wall(&mut self, iteration: u32, secs: f64) {
        self.iterations.entry(iteration).or_default().wall_secs += secs;
    }

    pub fn iteration(&self, i: u32) -> Option<&IterationCost> {
        self.iterations.get(&i)
    }

    pub fn iterations(&self) -> impl Iterator<Item = (u32, &IterationCost)> {
        self.iterations.iter().map(|(k, v)| (*k, v))
    }

    pub fn calls(&self) -> &[CallRecord] {
        &self.calls
    }

    /// Latency summed over the calls of `iteration`.
    pub fn latency_of(&self, iteration: u32) -> f64 {
        self.iterations.get(&iteration).map_or(0.0, |c| c.latency_secs)
    }

    pub fn total_cost(&self) -> f64 {
        self.iterations.values().map(|c| c.cost).sum()
    }

    pub fn total_minutes(&self) -> f64 {
        self.iterations.values().map(IterationCost::minutes).sum()
    }

    /// Order the call log by tag and re-sum the per-iteration totals in that
    /// order, so concurrent appends serialize bit-identically.
    pub fn normalize(&mut self) {
        self.calls.sort_by(|a, b| {
            (a.iteration, a.stage, &a.item, a.attempt, &a.request_hash)
                .cmp(&(b.iteration, b.stage, &b.item, b.attempt, &b.request_hash))
        });
        for it in self.iterations.values_mut() {
            it.cost = 0.0;
            it.latency_secs = 0.0;
            it.calls = 0;
        }
        for c in &self.calls {
            let it = self.iterations.entry(c.iteration).or_default();
            it.cost += c.cost;
            it.latency_secs += c.latency_secs;
            it.calls += 1;
        }
    }

    /// Keep only iterations `< iteration` (used when resuming).
    pub fn truncate_from(&mut self, iteration: u32) {
        self.iterations.retain(|k, _| *k < iteration);
        self.calls.retain(|c| c.iteration < iteration);
    }

    pub fn merge(&mut self, other: &CostLedger) {
        for (k, v) in &other.iterations {
            let it = self.iterations.entry(*k).or_default();
            it.cost += v.cost;
            it.latency_secs += v.latency_secs;
            it.wall_secs += v.wall_secs;
            it.calls += v.calls;
        }
        self.calls.extend(other.calls.iter().cloned());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceEntry {
    pub model_id: String,
    pub price_in: f64,
    pub price_out: f64,
    pub currency: String,
}

/// Token prices keyed by model id, read from a CSV file with header
/// `model_id,price_in,price_out,currency` (prices per 1M tokens).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriceTable {
    entries: BTreeMap<String, PriceEntry>,
}

impl PriceTable {
    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self, String> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = BTreeMap::new();
        for row in rdr.deserialize::<PriceEntry>() {
            let row = row.map_err(|e| e.to_string())?;
            if row.price_in < 0.0 || row.price_out < 0.0 {
                return Err(format!("negative price for {}", row.model_id));
            }
            entries.insert(row.model_id.clone(), row);
        }
        Ok(PriceTable { entries })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let file = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_reader(file).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn get(&self, model_id: &str) -> Option<&PriceEntry> {
        self.entries.get(model_id)
    }

    /// Fill the model's prices from the table, if listed.
    pub fn apply(&self, model: &mut ModelSpec) -> bool {
        match self.entries.get(&model.model_id) {
            Some(p) => {
                model.price_in = p.price_in;
                model.price_out = p.price_out;
                true
            }
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Family;

    fn resp(i: u64, o: u64) -> CompletionResponse {
        CompletionResponse {
            text: String::new(),
            input_tokens: i,
            output_tokens: o,
            latency_secs: 2.0,
        }
    }

    #[test]
    fn unit_prices() {
        let mut model = ModelSpec::new(Family::Gpt, "m");
        model.price_in = 1.0;
        model.price_out = 2.0;
        let mut ledger = CostLedger::default();
        assert_eq!(record_cost(&mut ledger, &resp(0, 0), &model, 1), 0.0);
        assert_eq!(record_cost(&mut ledger, &resp(1_000_000, 1_000_000), &model, 1), 3.0);
        assert_eq!(ledger.iteration(1).unwrap().cost, 3.0);
        assert_eq!(ledger.iteration(1).unwrap().calls, 2);
        assert!((ledger.iteration(1).unwrap().minutes() - 4.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn price_table_parses() {
        let csv = "model_id,price_in,price_out,currency\ngpt-5, 1.25, 10.0, USD\n";
        let table = PriceTable::from_reader(csv.as_bytes()).unwrap();
        let mut m = ModelSpec::new(Family::Gpt, "gpt-5");
        assert!(table.apply(&mut m));
        assert_eq!((m.price_in, m.price_out), (1.25, 10.0));
        assert!(PriceTable::from_reader("model_id,price_in,price_out,currency\nx,-1,0,USD\n".as_bytes()).is_err());
    }
}
