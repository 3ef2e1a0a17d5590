//! Depleting privacy-budget ledger guarding query execution.
//!
//! Basic sequential composition only: epsilons and deltas add. The boundary
//! is inclusive — a charge that lands exactly on the total is accepted.

use serde::{Deserialize, Serialize};

use crate::noise::PrivacyParams;

/// One accepted charge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineItem {
    pub label: String,
    pub epsilon: f64,
    pub delta: f64,
}

/// Outcome of a charge attempt. Exhaustion is a refusal, not a fault: the
/// ledger is left unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChargeOutcome {
    Accepted,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon_total: f64,
    pub delta_total: f64,
    pub epsilon_spent: f64,
    pub delta_spent: f64,
    pub line_items: Vec<LineItem>,
}

impl PrivacyBudget {
    pub fn new(epsilon_total: f64, delta_total: f64) -> Self {
        assert!(epsilon_total >= 0.0 && delta_total >= 0.0);
        PrivacyBudget {
            epsilon_total,
            delta_total,
            epsilon_spent: 0.0,
            delta_spent: 0.0,
            line_items: Vec::new(),
        }
    }

    /// Charges `params` under sequential composition. On exhaustion the
    /// ledger is untouched and `Exhausted` is returned.
    pub fn charge(&mut self, label: &str, params: PrivacyParams) -> ChargeOutcome {
        let eps_after = self.epsilon_spent + params.epsilon;
        let delta_after = self.delta_spent + params.delta;
        if eps_after > self.epsilon_total || delta_after > self.delta_total {
            return ChargeOutcome::Exhausted;
        }
        self.epsilon_spent = eps_after;
        self.delta_spent = delta_after;
        self.line_items.push(LineItem {
            label: label.to_string(),
            epsilon: params.epsilon,
            delta: params.delta,
        });
        ChargeOutcome::Accepted
    }

    pub fn epsilon_remaining(&self) -> f64 {
        self.epsilon_total - self.epsilon_spent
    }

    pub fn delta_remaining(&self) -> f64 {
        self.delta_total - self.delta_spent
    }

    /// JSON report with totals, spent, and per-query line items.
    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("budget serializes")
    }
}
