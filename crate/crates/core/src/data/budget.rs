use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Epoch-denominated sampler schedule at a given dataset size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pub n: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub burn_in_epochs: usize,
    pub cycle_epochs: usize,
}

impl BudgetSchedule {
    pub fn new(n: usize, batch_size: usize, epochs: usize, burn_in_epochs: usize, cycle_epochs: usize) -> Result<Self> {
        let s = Self {
            n,
            batch_size,
            epochs,
            burn_in_epochs,
            cycle_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.batch_size == 0 || self.cycle_epochs == 0 || self.epochs == 0 {
            return Err(invalid("n, batch size, epochs and cycle length must be positive"));
        }
        if self.burn_in_epochs >= self.epochs {
            return Err(invalid("burn-in must leave at least one cycle"));
        }
        if !(self.epochs - self.burn_in_epochs).is_multiple_of(self.cycle_epochs) {
            return Err(invalid(format!(
                "epochs after burn-in ({}) not a whole number of {}-epoch cycles",
                self.epochs - self.burn_in_epochs,
                self.cycle_epochs
            )));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    /// `G = ceil(n / B) * epochs`.
    pub fn total_gradient_steps(&self) -> usize {
        self.steps_per_epoch() * self.epochs
    }

    /// Posterior samples collected per chain.
    pub fn samples_per_chain(&self) -> usize {
        (self.epochs - self.burn_in_epochs) / self.cycle_epochs
    }
}

/// Rescales `reference` to `n_sub` examples keeping the total number of
/// gradient steps and the per-chain sample count exactly fixed.
///
/// Epochs scale by `ceil(n_ref/B) / ceil(n_sub/B)`, which must give a whole
/// number. The cycle length is scaled and rounded up; burn-in absorbs the
/// remainder so that `burn_in + K * cycle = epochs`.
pub fn schedule_for_budget(reference: &BudgetSchedule, n_sub: usize) -> Result<BudgetSchedule> {
    reference.validate()?;
    if n_sub == 0 {
        return Err(invalid("n_sub must be positive"));
    }
    let g = reference.total_gradient_steps();
    let k = reference.samples_per_chain();
    let spe_ref = reference.steps_per_epoch();
    let spe = n_sub.div_ceil(reference.batch_size);
    if !g.is_multiple_of(spe) {
        let lo = g / spe;
        let hi = lo + 1;
        return Err(Error::InfeasibleBudget(format!(
            "{g} gradient steps is not a whole number of {spe}-step epochs at n={n_sub}; \
             nearest feasible: {lo} epochs ({} steps) or {hi} epochs ({} steps)",
            lo * spe,
            hi * spe
        )));
    }
    let epochs = g / spe;
    let cycle = (reference.cycle_epochs * spe_ref).div_ceil(spe);
    if k * cycle > epochs {
        return Err(Error::InfeasibleBudget(format!(
            "{k} cycles of {cycle} epochs exceed {epochs} epochs at n={n_sub}"
        )));
    }
    let burn_in = epochs - k * cycle;
    if burn_in == 0 && reference.burn_in_epochs > 0 {
        return Err(Error::InfeasibleBudget(format!(
            "rounding the cycle length to {cycle} epochs leaves no burn-in at n={n_sub}"
        )));
    }
    BudgetSchedule::new(n_sub, reference.batch_size, epochs, burn_in, cycle)
}
