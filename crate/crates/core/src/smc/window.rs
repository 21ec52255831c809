use crate::error::{Error, Result};

/// Assigns each time to a window: window `s ≥ 1` covers `((s−1)T, sT]`
/// measured from the first time, and the first time itself joins window 1.
/// An infinite width puts everything in window 1.
pub fn window_partition(times: &[f64], width: f64) -> Result<Vec<usize>> {
    if !(width > 0.0) {
        return Err(Error::config("window", "width must be positive"));
    }
    if times.windows(2).any(|p| !(p[1] >= p[0])) {
        return Err(Error::Input(
            "window partition needs ascending times".into(),
        ));
    }
    let Some(&t0) = times.first() else {
        return Ok(Vec::new());
    };
    Ok(times
        .iter()
        .map(|&t| {
            if width.is_infinite() {
                1
            } else {
                ((t - t0) / width).ceil().max(1.0) as usize
            }
        })
        .collect())
}
