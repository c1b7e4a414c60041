//! PASS/FAIL bookkeeping for the exit-criteria suite.

use std::time::Duration;

/// Result of one criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Collects outcomes and prints one line per criterion as it is recorded.
#[derive(Debug, Default)]
pub struct Suite {
    outcomes: Vec<Outcome>,
}

impl Suite {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, id: &'static str, pass: bool, detail: String) {
        println!("{}", line(id, pass, &detail));
        self.outcomes.push(Outcome { id, pass, detail });
    }

    /// Records a criterion whose runtime budget is part of the contract.
    pub fn timed(&mut self, id: &'static str, budget: Duration, elapsed: Duration, pass: bool, detail: String) {
        let detail = format!("{detail} [{elapsed:.2?} of {budget:.0?}]");
        self.record(id, pass && elapsed < budget, detail);
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn failed(&self) -> impl Iterator<Item = &Outcome> {
        self.outcomes.iter().filter(|o| !o.pass)
    }

    /// Prints the tally and the failures; returns whether every criterion passed.
    pub fn finish(&self) -> bool {
        let failed: Vec<&Outcome> = self.failed().collect();
        println!("{} of {} criteria passed", self.outcomes.len() - failed.len(), self.outcomes.len());
        for o in &failed {
            eprintln!("failed {}: {}", o.id, o.detail);
        }
        failed.is_empty()
    }
}

fn line(id: &str, pass: bool, detail: &str) -> String {
    format!("{} {id:<3} {detail}", if pass { "PASS" } else { "FAIL" })
}
