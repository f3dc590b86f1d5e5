//! Fixed-precision integer arithmetic coding with E1/E2/E3 renormalization.
//!
//! The sender runs the *decoder* over the message bits (followed by a single
//! 1 and then zeros), which turns the bits into token choices; the receiver
//! runs the *encoder* over the observed tokens and reads the bits back.

use super::StegoError;

#[derive(Debug, Clone, Copy)]
enum Step {
    Lower,
    Upper,
    Middle,
}

#[derive(Debug, Clone)]
struct Interval {
    low: u64,
    high: u64,
    half: u64,
    quarter: u64,
}

impl Interval {
    fn new(precision: u32) -> Self {
        let whole = 1u64 << precision;
        Interval {
            low: 0,
            high: whole - 1,
            half: whole >> 1,
            quarter: whole >> 2,
        }
    }

    fn range(&self) -> u128 {
        (self.high - self.low) as u128 + 1
    }

    fn narrow(&mut self, lo: u64, hi: u64, total: u64) {
        let r = self.range();
        self.high = self.low + ((r * hi as u128) / total as u128) as u64 - 1;
        self.low += ((r * lo as u128) / total as u128) as u64;
    }

    fn renormalize(&mut self, mut on: impl FnMut(Step)) {
        loop {
            if self.high < self.half {
                on(Step::Lower);
            } else if self.low >= self.half {
                on(Step::Upper);
                self.low -= self.half;
                self.high -= self.half;
            } else if self.low >= self.quarter && self.high < self.half + self.quarter {
                on(Step::Middle);
                self.low -= self.quarter;
                self.high -= self.quarter;
            } else {
                return;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
    }
}

pub(crate) fn check_precision(precision: u32) -> Result<(), StegoError> {
    if (16..=62).contains(&precision) {
        Ok(())
    } else {
        Err(StegoError::Config(format!("precision {precision} outside 16..=62")))
    }
}

/// Cumulative integer frequencies for probabilities in pool order.
/// Every symbol gets at least one count; the total stays within a quarter
/// of the register range.
pub fn quantize(probs: &[f64], precision: u32) -> Result<Vec<u64>, StegoError> {
    let quarter = 1u64 << (precision - 2);
    let n = probs.len() as u64;
    if n == 0 || n >= quarter {
        return Err(StegoError::Config(format!(
            "pool of {n} symbols does not fit {precision}-bit coder"
        )));
    }
    let budget = (quarter - n) as f64;
    let mut cum = Vec::with_capacity(probs.len() + 1);
    cum.push(0u64);
    let mut acc = 0u64;
    for &p in probs {
        acc += 1 + (p.clamp(0.0, 1.0) * budget).floor() as u64;
        cum.push(acc);
    }
    debug_assert!(acc <= quarter);
    Ok(cum)
}

/// Produces bits from symbol choices (receiver side).
#[derive(Debug, Clone)]
pub struct ArithmeticEncoder {
    iv: Interval,
    pending: usize,
    out: Vec<bool>,
}

impl ArithmeticEncoder {
    pub fn new(precision: u32) -> Self {
        ArithmeticEncoder {
            iv: Interval::new(precision),
            pending: 0,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, cum: &[u64], index: usize) {
        let total = *cum.last().expect("non-empty table");
        self.iv.narrow(cum[index], cum[index + 1], total);
        let (out, pending) = (&mut self.out, &mut self.pending);
        self.iv.renormalize(|s| match s {
            Step::Lower | Step::Upper => {
                let bit = matches!(s, Step::Upper);
                out.push(bit);
                out.extend(std::iter::repeat_n(!bit, *pending));
                *pending = 0;
            }
            Step::Middle => *pending += 1,
        });
    }

    /// Bits settled so far; unresolved middle-straddles are not included.
    pub fn bits(&self) -> &[bool] {
        &self.out
    }
}

/// Turns a bit stream into symbol choices (sender side).
#[derive(Debug, Clone)]
pub struct ArithmeticDecoder<'a> {
    iv: Interval,
    value: u64,
    stream: &'a [bool],
    next: usize,
    pending: usize,
    committed: usize,
}

impl<'a> ArithmeticDecoder<'a> {
    pub fn new(stream: &'a [bool], precision: u32) -> Self {
        let mut d = ArithmeticDecoder {
            iv: Interval::new(precision),
            value: 0,
            stream,
            next: 0,
            pending: 0,
            committed: 0,
        };
        for _ in 0..precision {
            d.value = (d.value << 1) | d.pull();
        }
        d
    }

    fn pull(&mut self) -> u64 {
        let i = self.next;
        self.next += 1;
        match i.cmp(&self.stream.len()) {
            std::cmp::Ordering::Less => u64::from(self.stream[i]),
            std::cmp::Ordering::Equal => 1,
            std::cmp::Ordering::Greater => 0,
        }
    }

    /// Number of leading stream bits the matching encoder has emitted.
    pub fn committed(&self) -> usize {
        self.committed
    }

    pub fn decode(&mut self, cum: &[u64]) -> usize {
        let total = *cum.last().expect("non-empty table");
        let r = self.iv.range();
        let offset = (self.value - self.iv.low) as u128;
        let scaled = (((offset + 1) * total as u128 - 1) / r) as u64;
        let index = cum.partition_point(|&c| c <= scaled) - 1;
        self.iv.narrow(cum[index], cum[index + 1], total);
        let mut steps = Vec::new();
        self.iv.renormalize(|s| steps.push(s));
        for s in steps {
            match s {
                Step::Lower => {}
                Step::Upper => self.value -= self.iv.half,
                Step::Middle => self.value -= self.iv.quarter,
            }
            match s {
                Step::Lower | Step::Upper => {
                    self.committed += 1 + self.pending;
                    self.pending = 0;
                }
                Step::Middle => self.pending += 1,
            }
            let bit = self.pull();
            self.value = (self.value << 1) | bit;
        }
        index
    }
}
