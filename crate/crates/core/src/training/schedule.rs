use super::TrainError;

/// Linear warmup from 0 to `lr_peak` over `warmup_ratio * total` steps, then
/// cosine decay to 0 at `total`.
pub fn lr_at(step: usize, total: usize, lr_peak: f64, warmup_ratio: f64) -> Result<f64, TrainError> {
    if total == 0 {
        return Err(TrainError::Config("schedule needs total > 0 steps".into()));
    }
    if step > total {
        return Err(TrainError::Config(format!("step {step} is past the schedule end {total}")));
    }
    let (step, total) = (step as f64, total as f64);
    let warmup = warmup_ratio * total;
    if step < warmup {
        return Ok(lr_peak * step / warmup);
    }
    let span = total - warmup;
    if span <= 0.0 {
        return Ok(lr_peak);
    }
    let progress = (step - warmup) / span;
    Ok(0.5 * lr_peak * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(lr_at(0, 100, 1e-4, 0.1).unwrap(), 0.0);
        assert!((lr_at(10, 100, 1e-4, 0.1).unwrap() - 1e-4).abs() < 1e-18);
        assert!(lr_at(100, 100, 1e-4, 0.1).unwrap().abs() < 1e-18);
        assert!(lr_at(0, 0, 1e-4, 0.1).is_err());
    }
}
