//! Write-data encoders and their matching decoders.
//!
//! Every policy is an involution keyed by per-write metadata:
//!
//! * `None`: identity.
//! * `Inversion`: each row keeps a toggle; every second write to a row is
//!   stored inverted.
//! * `Barrel`: the `n`-th write to a row is rotated left by
//!   `n mod (max_shift + 1)` bits.
//! * `Trbg`: a single global random enable bit per write; when set, the whole
//!   word is inverted (an XOR with the enable fanned out to every bit). The
//!   enable is the raw generator bit XOR a balance flag that flips every
//!   `2^M` ticks of an M-bit counter, which cancels generator bias.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::word::{invert_in_place, rotate_left_into, rotate_right_into, Word};

/// What advances the bias-balancing counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceClock {
    /// One tick per enable emitted (one per word write).
    Emission,
    /// One tick per block written to the memory.
    #[default]
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrbgParams {
    /// Probability that the raw generator emits '1'.
    pub bias: f64,
    /// Width of the balancing counter.
    pub m: u32,
    pub balancing: bool,
    pub seed: u64,
    #[serde(default)]
    pub clock: BalanceClock,
}

impl Default for TrbgParams {
    fn default() -> Self {
        TrbgParams {
            bias: 0.5,
            m: 4,
            balancing: true,
            seed: 0,
            clock: BalanceClock::Block,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncodingPolicy {
    None,
    Inversion,
    Barrel { max_shift: u32 },
    Trbg(TrbgParams),
}

impl EncodingPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            EncodingPolicy::None => "none",
            EncodingPolicy::Inversion => "inversion",
            EncodingPolicy::Barrel { .. } => "barrel",
            EncodingPolicy::Trbg(_) => "trbg",
        }
    }

    /// Short label including the parameters that distinguish report rows.
    pub fn label(&self) -> String {
        match self {
            EncodingPolicy::Barrel { max_shift } => format!("barrel(max_shift={max_shift})"),
            EncodingPolicy::Trbg(p) => format!(
                "trbg(bias={},{})",
                p.bias,
                if p.balancing { format!("balanced,m={}", p.m) } else { "unbalanced".into() }
            ),
            other => other.name().to_string(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, EncodingPolicy::Trbg(_))
    }

    pub fn validate(&self, word_bits: usize) -> Result<()> {
        match *self {
            EncodingPolicy::Barrel { max_shift } if max_shift as usize >= word_bits => Err(Error::invalid(format!(
                "max_shift {max_shift} must be below the word width {word_bits}"
            ))),
            EncodingPolicy::Trbg(p) => {
                if !(0.0..=1.0).contains(&p.bias) {
                    return Err(Error::invalid(format!("TRBG bias must lie in [0,1], got {}", p.bias)));
                }
                if !(1..=63).contains(&p.m) {
                    return Err(Error::invalid(format!("M must be in 1..=63, got {}", p.m)));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Control information the decoder needs for one write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Control {
    None,
    /// The enable bit `E`: the word was stored inverted when set.
    Invert(bool),
    /// Left-rotation applied.
    Shift(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Metadata {
    pub seq: u64,
    pub row: usize,
    pub control: Control,
}

/// Seeded stand-in for the hardware random bit generator plus its
/// bias-balancing register.
#[derive(Debug, Clone)]
pub struct Trbg {
    rng: ChaCha8Rng,
    bias: f64,
    balancing: bool,
    period: u64,
    counter: u64,
    flag: bool,
}

impl Trbg {
    pub fn new(params: &TrbgParams) -> Self {
        Trbg {
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            bias: params.bias,
            balancing: params.balancing,
            period: 1u64 << params.m,
            counter: 0,
            flag: false,
        }
    }

    pub fn raw_bit(&mut self) -> bool {
        self.rng.random::<f64>() < self.bias
    }

    /// Current enable for a fresh raw bit, without ticking the counter.
    pub fn enable(&mut self) -> bool {
        self.raw_bit() ^ self.flag
    }

    /// Advances the balancing counter; the flag flips when it wraps.
    pub fn tick(&mut self) {
        self.counter = (self.counter + 1) % self.period;
        if self.balancing && self.counter == 0 {
            self.flag = !self.flag;
        }
    }

    /// Emits one enable and ticks the counter once.
    pub fn advance(&mut self) -> bool {
        let e = self.enable();
        self.tick();
        e
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn balance_flag(&self) -> bool {
        self.flag
    }
}

#[derive(Debug, Clone)]
enum State {
    None,
    Inversion { toggles: Vec<bool> },
    Barrel { writes: Vec<u32>, modulus: u32 },
    Trbg { gen: Box<Trbg>, clock: BalanceClock },
}

/// Stateful write-data encoder for one memory.
#[derive(Debug, Clone)]
pub struct Encoder {
    policy: EncodingPolicy,
    width: usize,
    rows: usize,
    seq: u64,
    state: State,
    scratch: Vec<u64>,
}

impl Encoder {
    pub fn new(policy: EncodingPolicy, width: usize, rows: usize) -> Result<Self> {
        policy.validate(width)?;
        let state = match policy {
            EncodingPolicy::None => State::None,
            EncodingPolicy::Inversion => State::Inversion { toggles: vec![false; rows] },
            EncodingPolicy::Barrel { max_shift } => State::Barrel {
                writes: vec![0; rows],
                modulus: max_shift + 1,
            },
            EncodingPolicy::Trbg(p) => State::Trbg {
                gen: Box::new(Trbg::new(&p)),
                clock: p.clock,
            },
        };
        Ok(Encoder {
            policy,
            width,
            rows,
            seq: 0,
            state,
            scratch: vec![0; width.div_ceil(64)],
        })
    }

    pub fn policy(&self) -> &EncodingPolicy {
        &self.policy
    }

    /// Writes encoded so far.
    pub fn writes(&self) -> u64 {
        self.seq
    }

    pub fn encode(&mut self, word: &Word, row: usize) -> Result<(Word, Metadata)> {
        if word.width() != self.width {
            return Err(Error::invalid(format!(
                "word width {} does not match encoder width {}",
                word.width(),
                self.width
            )));
        }
        let mut out = word.clone();
        let seq = self.seq;
        let control = self.encode_in_place(out.limbs_mut(), row)?;
        Ok((out, Metadata { seq, row, control }))
    }

    /// Encodes `limbs` in place; the hot-path form of [`Encoder::encode`].
    pub fn encode_in_place(&mut self, limbs: &mut [u64], row: usize) -> Result<Control> {
        if row >= self.rows {
            return Err(Error::RowOutOfRange { row, rows: self.rows });
        }
        self.seq += 1;
        Ok(match &mut self.state {
            State::None => Control::None,
            State::Inversion { toggles } => {
                let e = toggles[row];
                toggles[row] = !e;
                if e {
                    invert_in_place(limbs, self.width);
                }
                Control::Invert(e)
            }
            State::Barrel { writes, modulus } => {
                let s = writes[row] % *modulus;
                writes[row] = (writes[row] + 1) % *modulus;
                if s != 0 {
                    self.scratch.copy_from_slice(limbs);
                    rotate_left_into(&self.scratch, self.width, s as usize, limbs);
                }
                Control::Shift(s)
            }
            State::Trbg { gen, clock } => {
                let e = match clock {
                    BalanceClock::Emission => gen.advance(),
                    BalanceClock::Block => gen.enable(),
                };
                if e {
                    invert_in_place(limbs, self.width);
                }
                Control::Invert(e)
            }
        })
    }

    /// Marks the end of a block write.
    pub fn end_block(&mut self) {
        if let State::Trbg { gen, clock: BalanceClock::Block } = &mut self.state {
            gen.tick();
        }
    }

    /// Per-row write counters, reduced to the policy's cycle. Used to detect
    /// when a deterministic policy has returned to its initial state.
    pub fn is_at_initial_state(&self) -> bool {
        match &self.state {
            State::None => true,
            State::Inversion { toggles } => toggles.iter().all(|t| !t),
            State::Barrel { writes, .. } => writes.iter().all(|&w| w == 0),
            State::Trbg { .. } => false,
        }
    }
}

pub fn decode(encoded: &Word, control: Control) -> Word {
    let mut out = encoded.clone();
    decode_in_place(out.limbs_mut(), encoded.width(), control);
    out
}

pub fn decode_in_place(limbs: &mut [u64], width: usize, control: Control) {
    match control {
        Control::None | Control::Invert(false) | Control::Shift(0) => {}
        Control::Invert(true) => invert_in_place(limbs, width),
        Control::Shift(s) => {
            let src = limbs.to_vec();
            rotate_right_into(&src, width, s as usize, limbs);
        }
    }
}

/// Metadata store keyed by `(write sequence index, row)`.
#[derive(Debug, Clone, Default)]
pub struct MetadataLog {
    records: HashMap<(u64, usize), Control>,
}

impl MetadataLog {
    pub fn record(&mut self, meta: Metadata) {
        self.records.insert((meta.seq, meta.row), meta.control);
    }

    pub fn lookup(&self, seq: u64, row: usize) -> Result<Control> {
        self.records
            .get(&(seq, row))
            .copied()
            .ok_or(Error::MissingMetadata { seq, row })
    }

    pub fn decode(&self, encoded: &Word, seq: u64, row: usize) -> Result<Word> {
        Ok(decode(encoded, self.lookup(seq, row)?))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
