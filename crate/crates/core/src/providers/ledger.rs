use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::Serialize;

/// Per-provider call accounting. Token counts are a chars/4 estimate.
#[derive(Debug, Default)]
pub struct TokenLedger {
    entries: Mutex<BTreeMap<String, LedgerEntry>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub calls: u64,
    pub attempts: u64,
    pub input_chars: u64,
    pub output_chars: u64,
    pub cache_hits: u64,
}

impl LedgerEntry {
    pub fn estimated_tokens(&self) -> u64 {
        (self.input_chars + self.output_chars).div_ceil(4)
    }
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// One logical call that took `attempts` tries.
    pub fn record(&self, provider: &str, attempts: usize, input_chars: usize, output_chars: usize) {
        let mut map = self.entries.lock().unwrap();
        let e = map.entry(provider.to_string()).or_default();
        e.calls += 1;
        e.attempts += attempts as u64;
        e.input_chars += (input_chars * attempts) as u64;
        e.output_chars += output_chars as u64;
    }

    pub fn record_cache_hit(&self, provider: &str) {
        let mut map = self.entries.lock().unwrap();
        map.entry(provider.to_string()).or_default().cache_hits += 1;
    }

    pub fn snapshot(&self) -> BTreeMap<String, LedgerEntry> {
        self.entries.lock().unwrap().clone()
    }

    pub fn total_calls(&self) -> u64 {
        self.entries.lock().unwrap().values().map(|e| e.calls).sum()
    }

    /// CSV rows `provider,calls,attempts,input_chars,output_chars,cache_hits,estimated_tokens`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("provider,calls,attempts,input_chars,output_chars,cache_hits,estimated_tokens\n");
        for (name, e) in self.snapshot() {
            out.push_str(&format!(
                "{name},{},{},{},{},{},{}\n",
                e.calls,
                e.attempts,
                e.input_chars,
                e.output_chars,
                e.cache_hits,
                e.estimated_tokens()
            ));
        }
        out
    }
}
