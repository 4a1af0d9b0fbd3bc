//! JSON wire format of the remote denoise service.
//!
//! Tensors travel as base64 of row-major little-endian `f32`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Conditioning, DenoiseError, DepthMap, Prompt};
use crate::latent::Latent;

pub const SCHEMA: &str = "textailor-denoise/1";
pub const DENOISE_PATH: &str = "/v1/denoise";
pub const HEALTH_PATH: &str = "/v1/health";

pub fn encode_f32(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str) -> Result<Vec<f32>, DenoiseError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| DenoiseError::Protocol(format!("bad base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(DenoiseError::Protocol(format!(
            "payload of {} bytes is not a whole number of f32",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PromptField {
    Token(u32),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRequest {
    pub schema: String,
    pub z: String,
    pub shape: Vec<usize>,
    pub t: u64,
    pub prompt: PromptField,
    pub depth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<f64>,
}

impl DenoiseRequest {
    pub fn new(z_t: &Latent, t: usize, cond: &Conditioning, guidance: Option<f64>) -> Self {
        let prompt = match &cond.prompt.text {
            Some(text) => PromptField::Text(text.clone()),
            None => PromptField::Token(cond.prompt.token),
        };
        Self {
            schema: SCHEMA.to_owned(),
            z: encode_f32(z_t.data()),
            shape: z_t.shape().to_vec(),
            t: t as u64,
            prompt,
            depth: encode_f32(&cond.depth.values),
            guidance,
        }
    }

    /// Server-side decoding of the request back into engine types.
    pub fn decode(&self) -> Result<(Latent, usize, Conditioning), DenoiseError> {
        if self.schema != SCHEMA {
            return Err(DenoiseError::Version {
                expected: SCHEMA.to_owned(),
                got: self.schema.clone(),
            });
        }
        let z = decode_tensor(&self.z, &self.shape)?;
        let depth: Vec<f64> = decode_f32(&self.depth)?.into_iter().map(f64::from).collect();
        let (h, w) = (z.height(), z.width());
        if depth.len() != h * w {
            return Err(DenoiseError::Protocol(format!(
                "depth has {} values, expected {}",
                depth.len(),
                h * w
            )));
        }
        let prompt = match &self.prompt {
            PromptField::Token(t) => Prompt::token(*t),
            PromptField::Text(s) => Prompt::from_text(s),
        };
        let cond = Conditioning {
            prompt,
            depth: DepthMap {
                height: h,
                width: w,
                values: depth,
            },
        };
        Ok((z, self.t as usize, cond))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResponse {
    pub eps: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
}

impl DenoiseResponse {
    pub fn new(eps: &Latent) -> Self {
        Self {
            eps: encode_f32(eps.data()),
            shape: eps.shape().to_vec(),
            schema: Some(SCHEMA.to_owned()),
        }
    }

    /// Validates the response against the request shape and decodes it.
    pub fn into_latent(self, want: [usize; 3]) -> Result<Latent, DenoiseError> {
        if let Some(s) = &self.schema {
            if s != SCHEMA {
                return Err(DenoiseError::Version {
                    expected: SCHEMA.to_owned(),
                    got: s.clone(),
                });
            }
        }
        if self.shape != want {
            return Err(DenoiseError::ResponseShape {
                got: self.shape,
                want: want.to_vec(),
            });
        }
        decode_tensor(&self.eps, &self.shape)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub schema: String,
    pub model_id: String,
}

fn decode_tensor(payload: &str, shape: &[usize]) -> Result<Latent, DenoiseError> {
    let shape: [usize; 3] = shape
        .try_into()
        .map_err(|_| DenoiseError::Protocol(format!("shape {shape:?} is not [C,h,w]")))?;
    let values = decode_f32(payload)?;
    if values.len() != shape.iter().product::<usize>() {
        return Err(DenoiseError::Protocol(format!(
            "payload has {} values, shape {shape:?} needs {}",
            values.len(),
            shape.iter().product::<usize>()
        )));
    }
    Ok(Latent::from_vec(shape, values.into_iter().map(f64::from).collect())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f32_payload_round_trips_bit_exactly(bits in proptest::collection::vec(any::<u32>(), 0..64)) {
            let vals: Vec<f32> = bits.into_iter().map(f32::from_bits).filter(|v| !v.is_nan()).collect();
            let wide: Vec<f64> = vals.iter().map(|&v| f64::from(v)).collect();
            let back = decode_f32(&encode_f32(&wide)).unwrap();
            prop_assert_eq!(
                back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn wire_layout_is_little_endian_row_major() {
        let z = Latent::from_vec([1, 1, 2], vec![1.0, -2.0]).unwrap();
        let text = encode_f32(z.data());
        let bytes = STANDARD.decode(text).unwrap();
        assert_eq!(bytes, [0, 0, 128, 63, 0, 0, 0, 192]);
    }

    #[test]
    fn response_validation() {
        let z = Latent::filled([2, 2, 2], 0.5);
        let ok = DenoiseResponse::new(&z);
        assert_eq!(ok.clone().into_latent([2, 2, 2]).unwrap(), z);
        assert!(matches!(
            ok.clone().into_latent([2, 2, 3]),
            Err(DenoiseError::ResponseShape { .. })
        ));
        let mut wrong_schema = ok.clone();
        wrong_schema.schema = Some("textailor-denoise/0".into());
        assert!(matches!(
            wrong_schema.into_latent([2, 2, 2]),
            Err(DenoiseError::Version { .. })
        ));
        let mut truncated = ok;
        truncated.eps = encode_f32(&[1.0; 7]);
        assert!(matches!(
            truncated.into_latent([2, 2, 2]),
            Err(DenoiseError::Protocol(_))
        ));
        assert!(decode_f32("not base64!").is_err());
    }

    #[test]
    fn request_decodes_to_engine_types() {
        let z = Latent::from_vec([1, 1, 2], vec![0.25, 0.5]).unwrap();
        let cond = Conditioning {
            prompt: Prompt::from_text("a cat"),
            depth: DepthMap {
                height: 1,
                width: 2,
                values: vec![0.0, 1.0],
            },
        };
        let req = DenoiseRequest::new(&z, 17, &cond, Some(7.5));
        let json = serde_json::to_value(&req).unwrap();
        assert_eq!(json["prompt"], "a cat");
        assert_eq!(json["shape"], serde_json::json!([1, 1, 2]));
        let (z2, t, c2) = req.decode().unwrap();
        assert_eq!((z2, t), (z, 17));
        assert_eq!(c2, cond);
    }
}
