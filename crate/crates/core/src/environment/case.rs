use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseName {
    L,
    H,
    A,
}

impl std::str::FromStr for CaseName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L" => Ok(CaseName::L),
            "H" => Ok(CaseName::H),
            "A" => Ok(CaseName::A),
            _ => Err(Error::param(format!(
                "unknown case {s:?}, expected L, H or A"
            ))),
        }
    }
}

/// Scenario: where packet-loss probabilities and initial split points are
/// drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub name: CaseName,
    pub loss_range: (f64, f64),
    pub init_p_range: (usize, usize),
}

impl CaseSpec {
    /// Preset for `name` on a model whose largest split is `max_split`.
    ///
    /// Initial ranges are stated for deep models (layers 1–5, 6–10, 1–10);
    /// they are clamped into `[1, max_split]`.
    pub fn preset(name: CaseName, max_split: usize) -> Self {
        let (loss_range, (lo, hi)) = match name {
            CaseName::L => ((0.0, 0.1), (1, 5)),
            CaseName::H => ((0.1, 0.3), (6, 10)),
            CaseName::A => ((0.0, 0.3), (1, 10)),
        };
        let max = max_split.max(1);
        let hi = hi.min(max);
        let lo = lo.min(hi);
        CaseSpec {
            name,
            loss_range,
            init_p_range: (lo, hi),
        }
    }

    pub fn validate(&self, max_split: usize) -> Result<()> {
        let (lo, hi) = self.loss_range;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(Error::param(format!(
                "loss range must satisfy 0 <= lo <= hi < 1, got [{lo}, {hi}]"
            )));
        }
        let (a, b) = self.init_p_range;
        if !(1 <= a && a <= b && b <= max_split) {
            return Err(Error::param(format!(
                "initial split range [{a}, {b}] must lie within [1, {max_split}]"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_clamp_to_model_depth() {
        let h = CaseSpec::preset(CaseName::H, 7);
        assert_eq!(h.init_p_range, (6, 7));
        assert_eq!(CaseSpec::preset(CaseName::A, 7).init_p_range, (1, 7));
        assert_eq!(CaseSpec::preset(CaseName::L, 31).init_p_range, (1, 5));
        assert_eq!(CaseSpec::preset(CaseName::H, 3).init_p_range, (3, 3));
        for name in [CaseName::L, CaseName::H, CaseName::A] {
            CaseSpec::preset(name, 7).validate(7).unwrap();
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("a".parse::<CaseName>().unwrap(), CaseName::A);
        assert!("x".parse::<CaseName>().is_err());
    }
}
