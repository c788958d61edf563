use crate::error::{KgError, Result};

/// Number of augmented triples in play at epoch `epoch` of `epochs`:
/// `⌊(epoch/epochs)^k · s_size⌋`, computed exactly in integers when it fits.
pub fn schedule_size(epoch: usize, epochs: usize, k: u32, s_size: usize) -> Result<usize> {
    if epochs == 0 || epoch == 0 || epoch > epochs {
        return Err(KgError::InvalidParam(format!(
            "epoch {epoch} outside 1..={epochs}"
        )));
    }
    if k == 0 {
        return Err(KgError::InvalidParam("schedule exponent k must be at least 1".into()));
    }
    let exact = (epoch as u128)
        .checked_pow(k)
        .zip((epochs as u128).checked_pow(k))
        .and_then(|(num, den)| num.checked_mul(s_size as u128).map(|n| n / den));
    Ok(match exact {
        Some(v) => v as usize,
        None => ((epoch as f64 / epochs as f64).powi(k as i32) * s_size as f64).floor() as usize,
    })
}
