use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::BYTE_VOCAB;

use super::HarnessError;

/// Parses a prompt file: one prompt per line as whitespace-separated token
/// ids; lines starting with `#` and blank lines are skipped.
pub fn parse_prompts(text: &str) -> Result<Vec<Vec<u32>>, HarnessError> {
    let mut prompts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens = line
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|e| HarnessError::Prompt { line: i + 1, message: format!("{t:?}: {e}") })
            })
            .collect::<Result<Vec<_>, _>>()?;
        prompts.push(tokens);
    }
    Ok(prompts)
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<Vec<Vec<u32>>, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_prompts(&text)
}

/// Uniform random byte-token prompts with lengths drawn from `min_len..=max_len`.
pub fn generate_prompts(count: usize, min_len: usize, max_len: usize, seed: u64) -> Result<Vec<Vec<u32>>, HarnessError> {
    if min_len == 0 || min_len > max_len {
        return Err(HarnessError::Invalid(format!("bad prompt length range {min_len}..={max_len}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let n = rng.gen_range(min_len..=max_len);
            (0..n).map(|_| rng.gen_range(0..BYTE_VOCAB)).collect()
        })
        .collect())
}

pub fn format_prompts(prompts: &[Vec<u32>], header: &str) -> String {
    let mut out = String::new();
    for line in header.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for p in prompts {
        let ids: Vec<String> = p.iter().map(u32::to_string).collect();
        let _ = writeln!(out, "{}", ids.join(" "));
    }
    out
}
