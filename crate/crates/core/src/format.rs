//! Number formatting and whole-file atomic writes shared by the CSV and
//! checkpoint writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{PchnError, Result};

/// Formats `x` with `digits` significant digits in the style of C's `%.*g`:
/// fixed notation for moderate exponents, scientific otherwise, trailing
/// zeros removed.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_exact(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Writes `contents` to a sibling temp file then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| PchnError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| PchnError::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| PchnError::io(&tmp, e))?;
    f.sync_all().map_err(|e| PchnError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| PchnError::io(path, e))
}
