use crate::error::Result;
use crate::model::{loss_and_gradients, EncoderParams, Objective, BLOCK_NAMES};
use crate::scalar::Scalar;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Lower bound on the relative-error denominator. Below it the comparison is
/// effectively absolute, since central differences carry round-off of order
/// `eps * |loss| / step` regardless of the gradient's size.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub block: &'static str,
    pub max_rel_error: f64,
    /// Index of the worst entry inside the block.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn block(&self, name: &str) -> Option<&BlockReport> {
        self.blocks.iter().find(|b| b.block == name)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares the analytic gradient of `objective` with central finite
/// differences, block by block.
pub fn finite_diff_check<T: Scalar>(
    params: &EncoderParams<T>,
    objective: &Objective<'_, T>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_gradients(params, objective)?;
    finite_diff_check_against(params, objective, &analytic, tolerance)
}

/// Same as [`finite_diff_check`] but against caller-supplied gradients.
pub fn finite_diff_check_against<T: Scalar>(
    params: &EncoderParams<T>,
    objective: &Objective<'_, T>,
    analytic: &EncoderParams<T>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let step = T::lit(FD_STEP);
    let two_step = step + step;
    let mut probe = params.clone();
    let mut blocks = Vec::with_capacity(4);
    for (b, name) in BLOCK_NAMES.iter().enumerate() {
        let len = params.blocks()[b].1.len();
        let mut worst = (0.0_f64, 0usize);
        for i in 0..len {
            let original = params.blocks()[b].1[i];
            probe.blocks_mut()[b].1[i] = original + step;
            let plus = objective.loss(&probe)?.total;
            probe.blocks_mut()[b].1[i] = original - step;
            let minus = objective.loss(&probe)?.total;
            probe.blocks_mut()[b].1[i] = original;
            let numeric = ((plus - minus) / two_step).as_f64();
            let err = relative_error(analytic.blocks()[b].1[i].as_f64(), numeric);
            if !(err <= worst.0) {
                worst = (err, i);
            }
        }
        blocks.push(BlockReport { block: name, max_rel_error: worst.0, worst_index: worst.1, passed: worst.0 < tolerance });
    }
    Ok(GradCheckReport { blocks, tolerance })
}
