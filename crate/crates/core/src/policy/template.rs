//! The weight-in-prompt template: `<prompt> <W1> v1 <W2> v2 … <WK> vK`
//! with every value rendered to four decimal places.

use std::fmt;

use crate::error::{Error, Result};
use crate::simplex::WeightVector;

/// Half a unit in the last rendered place.
pub const RENDER_TOLERANCE: f64 = 5e-5;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WeightedPromptEncoding(String);

impl WeightedPromptEncoding {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for WeightedPromptEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn check_prompt_id(prompt_id: &str) -> Result<()> {
    if prompt_id.is_empty() || prompt_id.chars().any(char::is_whitespace) || prompt_id.starts_with("<W") {
        return Err(Error::Parse(format!("invalid prompt id {prompt_id:?}")));
    }
    Ok(())
}

pub fn encode_weighted_prompt(prompt_id: &str, w: &WeightVector) -> Result<WeightedPromptEncoding> {
    check_prompt_id(prompt_id)?;
    let mut out = String::from(prompt_id);
    for (i, v) in w.as_slice().iter().enumerate() {
        // `+ 0.0` turns a negative zero into a positive one.
        out.push_str(&format!(" <W{}> {:.4}", i + 1, v + 0.0));
    }
    Ok(WeightedPromptEncoding(out))
}

/// Parses an encoding back into its prompt id and `num_objectives` weights.
/// The weights are returned as rendered, without renormalization.
pub fn decode_weighted_prompt(text: &str, num_objectives: usize) -> Result<(String, WeightVector)> {
    let mut tokens = text.split(' ');
    let prompt_id = tokens.next().unwrap_or_default();
    check_prompt_id(prompt_id)?;
    let rest: Vec<&str> = tokens.collect();
    if rest.len() % 2 != 0 {
        return Err(Error::Parse(format!("dangling token in {text:?}")));
    }
    let found = rest.len() / 2;
    if found != num_objectives {
        return Err(Error::Parse(format!("expected {num_objectives} weights, found {found}")));
    }
    let mut weights = Vec::with_capacity(found);
    for (i, chunk) in rest.chunks_exact(2).enumerate() {
        let tag = format!("<W{}>", i + 1);
        if chunk[0] != tag {
            return Err(Error::Parse(format!("expected {tag}, found {:?}", chunk[0])));
        }
        let value: f64 = chunk[1]
            .parse()
            .map_err(|_| Error::Parse(format!("bad weight value {:?}", chunk[1])))?;
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Parse(format!("weight {value} is not a non-negative number")));
        }
        weights.push(value);
    }
    let tol = RENDER_TOLERANCE * num_objectives as f64 + 1e-12;
    let w = WeightVector::with_tolerance(weights, tol)
        .map_err(|e| Error::Parse(format!("weights are off the simplex: {e}")))?;
    Ok((prompt_id.to_string(), w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_four_decimals() {
        let w = WeightVector::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(encode_weighted_prompt("P7", &w).unwrap().as_str(), "P7 <W1> 0.2500 <W2> 0.7500");
        assert_eq!(
            encode_weighted_prompt("P0", &WeightVector::uniform(1)).unwrap().as_str(),
            "P0 <W1> 1.0000"
        );
    }

    #[test]
    fn decodes() {
        let (id, w) = decode_weighted_prompt("P7 <W1> 0.2500 <W2> 0.7500", 2).unwrap();
        assert_eq!(id, "P7");
        assert_eq!(w.as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "",
            "P7 <W1> 0.2500",
            "P7 <W1> 0.2500 <W3> 0.7500",
            "P7 <W1> 0.2500 <W2>",
            "P7 <W1> abc <W2> 0.7500",
            "P7 <W1> 0.5000 <W2> 0.7500",
            "P7 <W1> -0.2500 <W2> 1.2500",
            "<W1> 0.5000 <W2> 0.5000",
            "P7  <W1> 0.2500 <W2> 0.7500",
        ] {
            assert!(matches!(decode_weighted_prompt(bad, 2), Err(Error::Parse(_))), "{bad:?}");
        }
        assert!(encode_weighted_prompt("two words", &WeightVector::uniform(2)).is_err());
    }
}
