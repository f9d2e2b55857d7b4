use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{SearchOutcome, Variant};

pub const AUDIT_TOLERANCE: f64 = 1e-9;

/// Frontier accounting of a finished search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassAudit {
    pub covered: f64,
    pub pruned: f64,
    pub eos: f64,
    pub nonviable: f64,
    pub abandoned: f64,
    pub total: f64,
    pub residual: f64,
}

/// Checks that every unit of probability mass is accounted for exactly once.
///
/// Baseline: covered + pruned + eos (+ abandoned) = 1. Pruned variants also
/// need the non-viable ledger, which is only kept when the search ran with
/// `track_nonviable`.
pub fn mass_audit(outcome: &SearchOutcome) -> Result<MassAudit> {
    let nonviable = match (outcome.variant, outcome.nonviable_mass) {
        (Variant::Baseline { .. }, _) => 0.0,
        (Variant::Pruned { .. }, Some(m)) => m,
        (Variant::Pruned { .. }, None) => {
            return Err(Error::invalid(
                "pruned run did not track non-viable mass; rerun with track_nonviable",
            ))
        }
    };
    let total = outcome.covered_mass + outcome.pruned_mass + outcome.eos_mass + nonviable + outcome.abandoned_mass;
    let residual = total - 1.0;
    let audit = MassAudit {
        covered: outcome.covered_mass,
        pruned: outcome.pruned_mass,
        eos: outcome.eos_mass,
        nonviable,
        abandoned: outcome.abandoned_mass,
        total,
        residual,
    };
    if residual.abs() > AUDIT_TOLERANCE {
        return Err(Error::MassIdentity {
            residual,
            detail: format!(
                "covered {:.12} + pruned {:.12} + eos {:.12} + nonviable {:.12} + abandoned {:.12}",
                audit.covered, audit.pruned, audit.eos, audit.nonviable, audit.abandoned
            ),
        });
    }
    Ok(audit)
}
