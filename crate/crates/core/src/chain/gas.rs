use serde::{Deserialize, Serialize};

use super::ChainCall;

/// Gas accounting constants. Gas is a counter charged per call, never an
/// execution meter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasModel {
    pub join: u64,
    pub withdraw_init: u64,
    pub withdraw_confirm: u64,
    /// Fixed cost of any call that checks signatures.
    pub call_base: u64,
    /// Cost of checking one participant signature.
    pub per_signature: u64,
    pub gas_limit: u64,
}

pub const JOIN_GAS: u64 = 43_211;
pub const WITHDRAW_GAS: u64 = 100_166;
pub const PER_SIGNATURE_GAS: u64 = 10_962;
pub const CALL_BASE_GAS: u64 = 21_000;
pub const DEFAULT_PARTICIPANT_CAP: u64 = 300;

impl Default for GasModel {
    fn default() -> Self {
        GasModel {
            join: JOIN_GAS,
            withdraw_init: WITHDRAW_GAS / 2,
            withdraw_confirm: WITHDRAW_GAS - WITHDRAW_GAS / 2,
            call_base: CALL_BASE_GAS,
            per_signature: PER_SIGNATURE_GAS,
            gas_limit: CALL_BASE_GAS + PER_SIGNATURE_GAS * DEFAULT_PARTICIPANT_CAP,
        }
    }
}

impl GasModel {
    pub fn withdraw_total(&self) -> u64 {
        self.withdraw_init + self.withdraw_confirm
    }

    /// Gas of a call verifying `n` signatures, e.g. a challenge answer.
    pub fn signature_checks(&self, n: usize) -> u64 {
        self.call_base + self.per_signature * n as u64
    }

    /// Largest hub whose fully signed state fits in one call.
    pub fn participant_cap(&self) -> usize {
        (self.gas_limit.saturating_sub(self.call_base) / self.per_signature) as usize
    }

    pub fn cost(&self, call: &ChainCall) -> u64 {
        match call {
            ChainCall::Join { .. } => self.join,
            ChainCall::OpenChallenge { attached, .. } => {
                self.signature_checks(attached.as_ref().map_or(0, |s| s.signatures.len()))
            }
            ChainCall::AnswerChallenge { state } => self.signature_checks(state.signatures.len()),
            ChainCall::SubmitIncomplete { state, .. } => {
                self.signature_checks(state.signatures.len())
            }
            ChainCall::SubmitSignature { .. } => self.signature_checks(1),
            ChainCall::WithdrawInit { .. } => self.withdraw_init,
            ChainCall::WithdrawConfirm => self.withdraw_confirm,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_calibration() {
        let g = GasModel::default();
        assert_eq!(g.withdraw_total(), 100_166);
        assert_eq!(g.signature_checks(100), 21_000 + 1_096_200);
        assert_eq!(g.participant_cap(), 300);
        assert!(g.signature_checks(300) <= g.gas_limit);
        assert!(g.signature_checks(301) > g.gas_limit);
    }

    #[test]
    fn answer_cost_is_affine_with_fixed_slope() {
        let g = GasModel::default();
        for n in 1..400 {
            assert_eq!(g.signature_checks(n) - g.signature_checks(n - 1), 10_962);
        }
    }
}
