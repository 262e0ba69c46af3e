use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::window::SampleWindow;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitData {
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

/// Sizes `(train, val, test)` for `n` windows.
pub fn split_sizes(n: usize, test_frac: f64, val_frac: f64) -> Result<(usize, usize, usize)> {
    let in_unit = |f: f64| f > 0.0 && f < 1.0;
    if !in_unit(test_frac) || !in_unit(val_frac) || test_frac + val_frac >= 1.0 {
        return Err(Error::Config(format!(
            "split fractions test={test_frac} val={val_frac} must lie in (0, 1) and sum below 1"
        )));
    }
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 windows to split, have {n}")));
    }
    let n_test = ((n as f64 * test_frac).round() as usize).clamp(1, n - 2);
    let rest = n - n_test;
    let n_val = ((rest as f64 * val_frac / (1.0 - test_frac)).round() as usize).clamp(1, rest - 1);
    Ok((rest - n_val, n_val, n_test))
}

/// The chronologically last `test_frac` of windows become the test set; the
/// remainder is shuffled by `seed` and divided into train and validation.
pub fn split(
    mut windows: Vec<SampleWindow>,
    test_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<SplitData> {
    let (n_train, n_val, n_test) = split_sizes(windows.len(), test_frac, val_frac)?;
    windows.sort_by_key(SampleWindow::anchor);
    let test = windows.split_off(n_train + n_val);
    debug_assert_eq!(test.len(), n_test);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    windows.shuffle(&mut rng);
    let train = windows.split_off(n_val);
    Ok(SplitData {
        train,
        val: windows,
        test,
    })
}
