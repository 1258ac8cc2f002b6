//! Fixed CSV renderings shared by every command.

use catdisp_core::{ExtendedReal, ReplicateOutcome, ReplicateRecord};

pub const SIGNIFICANT_DIGITS: usize = 10;

/// `v` to ten significant digits, positional for moderate exponents and
/// scientific otherwise, without trailing zeros; `inf` for infinities.
pub fn number(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIGNIFICANT_DIGITS as i32).contains(&exp) {
        // the exponent of the rounded value fixes the decimal count
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn extended(v: ExtendedReal) -> String {
    number(v.to_f64())
}

pub const REPLICATE_HEADER: [&str; 4] = ["replicate_id", "outcome", "extinction_generation_or_-1", "final_or_capped_Z"];

pub fn replicate_row(r: &ReplicateRecord) -> [String; 4] {
    let (outcome, generation, z) = match r.outcome {
        ReplicateOutcome::ExtinctBy { generation } => ("extinct", i64::from(generation), 0),
        ReplicateOutcome::AliveAtHorizon { population, capped: false } => ("alive", -1, population),
        ReplicateOutcome::AliveAtHorizon { population, capped: true } => ("capped", -1, population),
    };
    [r.replicate.to_string(), outcome.into(), generation.to_string(), z.to_string()]
}
