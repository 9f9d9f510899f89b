//! Lossless coding of quantized latents and the `.ltc` container.
//!
//! Container layout (little-endian):
//!
//! ```text
//! "LTQ1" | height u16 | width u16 | pad_right u8 | pad_bottom u8
//! beta f32 | model checksum u32 | payload length u32 | payload
//! ```
//!
//! Height and width are the original (unpadded) extents. The payload is the
//! arithmetic-coded symbol stream, scanned map-major then row-major.

pub mod arith;
pub mod binarize;

use crate::error::{Error, Result};
use crate::image_io::GrayImage;
use crate::model::Model;
use crate::quantization::{dequantize, quantize, QuantSpec, Symbols};
use crate::tensor::Tensor;

pub use arith::{ac_decode, ac_encode, BinContext, BinProbability};
pub use binarize::{binarize, decode_symbols, encode_symbols, Bin, BinKind};

pub const STREAM_MAGIC: &[u8; 4] = b"LTQ1";
pub const HEADER_LEN: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitstreamHeader {
    pub height: u16,
    pub width: u16,
    pub pad_right: u8,
    pub pad_bottom: u8,
    pub beta: f32,
    pub model_checksum: u32,
    pub payload_len: u32,
}

impl BitstreamHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(STREAM_MAGIC);
        out[4..6].copy_from_slice(&self.height.to_le_bytes());
        out[6..8].copy_from_slice(&self.width.to_le_bytes());
        out[8] = self.pad_right;
        out[9] = self.pad_bottom;
        out[10..14].copy_from_slice(&self.beta.to_le_bytes());
        out[14..18].copy_from_slice(&self.model_checksum.to_le_bytes());
        out[18..22].copy_from_slice(&self.payload_len.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != STREAM_MAGIC {
            return Err(Error::BadMagic { expected: "LTQ1" });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated("bitstream header"));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        Ok(BitstreamHeader {
            height: u16_at(4),
            width: u16_at(6),
            pad_right: bytes[8],
            pad_bottom: bytes[9],
            beta: f32::from_le_bytes(bytes[10..14].try_into().unwrap()),
            model_checksum: u32_at(14),
            payload_len: u32_at(18),
        })
    }
}

/// Result of coding one image.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub symbols: Symbols,
}

/// Result of decoding one bitstream.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub header: BitstreamHeader,
    pub symbols: Symbols,
    /// Cropped reconstruction before clamping and rounding.
    pub reconstruction: Tensor,
    pub image: GrayImage,
}

/// The quantizer a stream uses: β is stored as `f32`, so both sides use the rounded value.
fn stream_quantizer(model: &Model, beta: f32) -> Result<QuantSpec> {
    QuantSpec::from_model(model, beta as f64)
}

/// Pads, transforms, quantizes and codes `image` with step multiplier `beta`.
pub fn encode_image(image: &GrayImage, model: &Model, beta: f64) -> Result<Encoded> {
    if image.height > u16::MAX as usize || image.width > u16::MAX as usize {
        return Err(Error::Image(format!(
            "{}x{} exceeds the container's 16-bit extents",
            image.height, image.width
        )));
    }
    let stride = model.arch.total_stride();
    if stride > 256 {
        return Err(Error::Config(format!("total stride {stride} does not fit the pad fields")));
    }
    let beta32 = beta as f32;
    let spec = stream_quantizer(model, beta32)?;
    let (padded, pad_right, pad_bottom) = image.pad_to_multiple(stride);
    let y = model.encode_transform(&padded.to_tensor())?;
    let symbols = quantize(&y, &spec)?;
    let payload = encode_symbols(&symbols)?;
    let header = BitstreamHeader {
        height: image.height as u16,
        width: image.width as u16,
        pad_right: pad_right as u8,
        pad_bottom: pad_bottom as u8,
        beta: beta32,
        model_checksum: model.checksum(),
        payload_len: payload.len() as u32,
    };
    let mut bytes = header.to_bytes().to_vec();
    bytes.extend_from_slice(&payload);
    Ok(Encoded { bytes, symbols })
}

/// Decodes a bitstream produced by [`encode_image`] with the same model.
pub fn decode_image(bytes: &[u8], model: &Model) -> Result<Decoded> {
    let header = BitstreamHeader::parse(bytes)?;
    let checksum = model.checksum();
    if header.model_checksum != checksum {
        return Err(Error::ModelMismatch {
            expected: header.model_checksum,
            found: checksum,
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let len = header.payload_len as usize;
    if payload.len() < len {
        return Err(Error::Truncated("bitstream payload"));
    }
    if payload.len() > len {
        return Err(Error::Format {
            what: "bitstream",
            detail: format!("{} bytes after the payload", payload.len() - len),
        });
    }
    let stride = model.arch.total_stride();
    let (h, w) = (header.height as usize, header.width as usize);
    let (ph, pw) = (h + header.pad_bottom as usize, w + header.pad_right as usize);
    if h == 0 || w == 0 || ph % stride != 0 || pw % stride != 0 {
        return Err(Error::Format {
            what: "bitstream",
            detail: format!("padded extent {ph}x{pw} is not a multiple of stride {stride}"),
        });
    }
    let spec = stream_quantizer(model, header.beta)?;
    let symbols = decode_symbols(payload, [1, model.arch.m, ph / stride, pw / stride])?;
    let y_hat = dequantize(&symbols, &spec)?;
    let full = model.decode_transform(&y_hat)?;
    let mut cropped = Vec::with_capacity(h * w);
    for r in 0..h {
        cropped.extend_from_slice(&full.data()[r * pw..r * pw + w]);
    }
    let reconstruction = Tensor::new(vec![1, 1, h, w], cropped)?;
    let image = GrayImage::from_tensor(&reconstruction)?;
    Ok(Decoded {
        header,
        symbols,
        reconstruction,
        image,
    })
}
