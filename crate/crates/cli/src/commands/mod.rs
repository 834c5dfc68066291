//! Subcommand implementations.

pub mod analyze;
pub mod eval;
pub mod gen_data;
pub mod inspect;
pub mod pretrain;
pub mod train_token;

/// Overwrites a config field when the matching flag was given.
macro_rules! merge {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}
pub(crate) use merge;
