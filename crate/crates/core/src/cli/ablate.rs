//! Ablation variants mirroring the component, loss and concatenation studies.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::{ConcatMode, NetConfig, SseMode};
use crate::training::TrainConfig;

/// One row of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Gating, reconstruction and both attention kinds, trained on rMRAE + sparsity.
    Full,
    /// Gating and reconstruction, no refinement.
    AbsSr,
    /// Reconstruction and refinement without gating.
    SrSse,
    /// Gating, reconstruction, spectral refinement only.
    AbsSrSpe,
    /// Gating, reconstruction, spatial refinement only.
    AbsSrSpa,
    /// Full model trained on rMRAE alone.
    RmraeOnly,
    /// Full model without the concatenation input to the fusion conv.
    NoConcat,
    /// Full model concatenating the hazy input (same network as `Full`).
    ConcatY,
    /// Full model concatenating the gated input.
    ConcatYs,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Full,
        Variant::AbsSr,
        Variant::SrSse,
        Variant::AbsSrSpe,
        Variant::AbsSrSpa,
        Variant::RmraeOnly,
        Variant::NoConcat,
        Variant::ConcatY,
        Variant::ConcatYs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::AbsSr => "abs+sr",
            Variant::SrSse => "sr+sse",
            Variant::AbsSrSpe => "abs+sr+spe",
            Variant::AbsSrSpa => "abs+sr+spa",
            Variant::RmraeOnly => "rmrae-only",
            Variant::NoConcat => "no-concat",
            Variant::ConcatY => "concat-y",
            Variant::ConcatYs => "concat-ys",
        }
    }

    /// Applies the variant on top of a base configuration.
    pub fn configure(self, net: &NetConfig, train: &TrainConfig) -> (NetConfig, TrainConfig) {
        let mut n = NetConfig {
            abs: true,
            sse: SseMode::Both,
            concat: ConcatMode::Hazy,
            ..net.clone()
        };
        let mut t = TrainConfig {
            sparsity: true,
            ..train.clone()
        };
        match self {
            Variant::Full | Variant::ConcatY => {}
            Variant::AbsSr => n.sse = SseMode::None,
            Variant::SrSse => n.abs = false,
            Variant::AbsSrSpe => n.sse = SseMode::SpectralOnly,
            Variant::AbsSrSpa => n.sse = SseMode::SpatialOnly,
            Variant::RmraeOnly => t.sparsity = false,
            Variant::NoConcat => n.concat = ConcatMode::None,
            Variant::ConcatYs => n.concat = ConcatMode::Selected,
        }
        (n, t)
    }

    pub fn parse_list(s: &str) -> Result<Vec<Variant>> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        s.split(',').map(|v| v.trim().parse()).collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Self::ALL.iter().map(|v| v.name()).collect();
                Error::Parameter(format!("unknown variant '{s}', expected one of {}", known.join(", ")))
            })
    }
}

pub fn sse_label(mode: SseMode) -> &'static str {
    match mode {
        SseMode::None => "none",
        SseMode::SpectralOnly => "spectral",
        SseMode::SpatialOnly => "spatial",
        SseMode::Both => "both",
    }
}

pub fn concat_label(mode: ConcatMode) -> &'static str {
    match mode {
        ConcatMode::None => "none",
        ConcatMode::Hazy => "y",
        ConcatMode::Selected => "ys",
    }
}
