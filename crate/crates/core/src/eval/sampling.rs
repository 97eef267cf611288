use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SelsaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Window of consecutive frames centered on the reference frame.
    Consecutive,
    /// Every `stride`-th frame, centered on the reference frame.
    Strided,
    /// Reference frame plus frames drawn uniformly from the whole video.
    Shuffled,
}

/// How the pool frames are chosen for one reference frame at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub mode: SamplingMode,
    pub k_frames: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

impl SamplingPlan {
    pub fn consecutive(k_frames: usize) -> Self {
        SamplingPlan {
            mode: SamplingMode::Consecutive,
            k_frames,
            stride: 1,
        }
    }

    pub fn strided(k_frames: usize, stride: usize) -> Self {
        SamplingPlan {
            mode: SamplingMode::Strided,
            k_frames,
            stride,
        }
    }

    pub fn shuffled(k_frames: usize) -> Self {
        SamplingPlan {
            mode: SamplingMode::Shuffled,
            k_frames,
            stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_frames < 1 {
            return Err(SelsaError::Config(
                "sampling plan: k_frames must be at least 1".into(),
            ));
        }
        if self.stride < 1 {
            return Err(SelsaError::Config(
                "sampling plan: stride must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Short identifier, e.g. `consecutive_k5`, `strided_k21_s10`, `shuffled_k21`.
    pub fn label(&self) -> String {
        match self.mode {
            SamplingMode::Consecutive => format!("consecutive_k{}", self.k_frames),
            SamplingMode::Strided => format!("strided_k{}_s{}", self.k_frames, self.stride),
            SamplingMode::Shuffled => format!("shuffled_k{}", self.k_frames),
        }
    }
}

/// `k` frames `reference + i * step` containing the reference, centered on it
/// where possible and shifted inward at the sequence ends. The step shrinks
/// from `stride` until `k` such frames fit inside the video.
fn centered_progression(n_frames: usize, reference: usize, k: usize, stride: usize) -> Vec<usize> {
    let k = k.min(n_frames);
    if k == n_frames {
        return (0..n_frames).collect();
    }
    let max_fit = if k > 1 { (n_frames - 1) / (k - 1) } else { 1 };
    let mut step = stride.min(max_fit).max(1);
    loop {
        let r = reference as i64;
        let s = step as i64;
        let lo_min = -(r / s);
        let hi_max = (n_frames as i64 - 1 - r) / s;
        if hi_max - lo_min + 1 >= k as i64 {
            let mut lo = -((k as i64 - 1) / 2);
            lo = lo.max(lo_min);
            lo = lo.min(hi_max - (k as i64 - 1));
            return (lo..lo + k as i64).map(|i| (r + i * s) as usize).collect();
        }
        // step >= 2 here: step 1 always fits because k < n_frames
        step -= 1;
    }
}

/// Pool frame set `Omega` for `reference`, sorted ascending; always holds
/// `min(k, n_frames)` distinct frames including the reference.
pub fn sample_frames<R: Rng + ?Sized>(
    n_frames: usize,
    reference: usize,
    plan: &SamplingPlan,
    rng: &mut R,
) -> Result<Vec<usize>> {
    plan.validate()?;
    if reference >= n_frames {
        return Err(SelsaError::Precondition(format!(
            "reference frame {reference} outside a video of {n_frames} frames"
        )));
    }
    let k = plan.k_frames.min(n_frames);
    let mut omega = match plan.mode {
        SamplingMode::Consecutive => centered_progression(n_frames, reference, k, 1),
        SamplingMode::Strided => centered_progression(n_frames, reference, k, plan.stride),
        SamplingMode::Shuffled => {
            let mut out = vec![reference];
            out.extend(
                index::sample(rng, n_frames - 1, k - 1)
                    .into_iter()
                    .map(|i| if i >= reference { i + 1 } else { i }),
            );
            out
        }
    };
    omega.sort_unstable();
    Ok(omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn consecutive_window_is_centered() {
        let omega = sample_frames(100, 50, &SamplingPlan::consecutive(5), &mut rng()).unwrap();
        assert_eq!(omega, vec![48, 49, 50, 51, 52]);
    }

    #[test]
    fn strided_progression() {
        let omega = sample_frames(100, 50, &SamplingPlan::strided(3, 10), &mut rng()).unwrap();
        assert_eq!(omega, vec![40, 50, 60]);
    }

    #[test]
    fn windows_shift_inward_at_the_ends() {
        let omega = sample_frames(100, 0, &SamplingPlan::consecutive(5), &mut rng()).unwrap();
        assert_eq!(omega, vec![0, 1, 2, 3, 4]);
        let omega = sample_frames(100, 99, &SamplingPlan::consecutive(4), &mut rng()).unwrap();
        assert_eq!(omega, vec![96, 97, 98, 99]);
        let omega = sample_frames(100, 5, &SamplingPlan::strided(3, 10), &mut rng()).unwrap();
        assert_eq!(omega, vec![5, 15, 25]);
    }

    #[test]
    fn stride_shrinks_when_the_video_is_short() {
        // 21 frames at stride 10 need 201 frames; 60 frames allow stride 2
        let omega = sample_frames(60, 30, &SamplingPlan::strided(21, 10), &mut rng()).unwrap();
        assert_eq!(omega.len(), 21);
        assert!(omega.windows(2).all(|w| w[1] - w[0] == 2));
        assert!(omega.contains(&30));
        // odd reference in 41 frames: only 20 odd frames exist, so stride drops to 1
        let omega = sample_frames(41, 7, &SamplingPlan::strided(21, 2), &mut rng()).unwrap();
        assert_eq!(omega.len(), 21);
        assert!(omega.contains(&7));
    }

    #[test]
    fn k_larger_than_video_takes_everything() {
        for plan in [
            SamplingPlan::consecutive(30),
            SamplingPlan::strided(30, 4),
            SamplingPlan::shuffled(30),
        ] {
            let omega = sample_frames(12, 3, &plan, &mut rng()).unwrap();
            assert_eq!(omega, (0..12).collect::<Vec<_>>());
        }
    }

    #[test]
    fn shuffled_draws_distinct_frames_with_reference() {
        let mut r = rng();
        for i in 0..1000 {
            let reference = i % 60;
            let omega = sample_frames(60, reference, &SamplingPlan::shuffled(21), &mut r).unwrap();
            assert_eq!(omega.len(), 21);
            assert!(omega.contains(&reference));
            assert!(omega.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(sample_frames(10, 10, &SamplingPlan::consecutive(3), &mut rng()).is_err());
        assert!(sample_frames(10, 0, &SamplingPlan::consecutive(0), &mut rng()).is_err());
        assert!(sample_frames(10, 0, &SamplingPlan::strided(3, 0), &mut rng()).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(SamplingPlan::consecutive(5).label(), "consecutive_k5");
        assert_eq!(SamplingPlan::strided(21, 10).label(), "strided_k21_s10");
        assert_eq!(SamplingPlan::shuffled(21).label(), "shuffled_k21");
    }
}
