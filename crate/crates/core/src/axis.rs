//! Per-axis sizes in `(frequency, time)` order.

use std::fmt;
use std::str::FromStr;

/// A pair of per-axis extents, frequency first.
///
/// Spectrogram rows are frequency bins and columns are time frames; every
/// kernel, stride, dilation and receptive-field size in this crate uses the
/// same `(freq, time)` order. A value printed as `135x23` means 135 frequency
/// bins by 23 time frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Axis2 {
    pub freq: u32,
    pub time: u32,
}

impl Axis2 {
    pub const fn new(freq: u32, time: u32) -> Self {
        Axis2 { freq, time }
    }

    /// Same extent on both axes.
    pub const fn splat(v: u32) -> Self {
        Axis2 { freq: v, time: v }
    }

    pub const ONE: Axis2 = Axis2::splat(1);

    /// True when both components are at least one.
    pub fn is_positive(self) -> bool {
        self.freq >= 1 && self.time >= 1
    }

    /// True when `self` is no larger than `other` on both axes.
    pub fn fits_within(self, other: Axis2) -> bool {
        self.freq <= other.freq && self.time <= other.time
    }

    /// Per-axis maximum.
    pub fn max(self, other: Axis2) -> Axis2 {
        Axis2::new(self.freq.max(other.freq), self.time.max(other.time))
    }

    /// Per-axis saturating product.
    pub fn saturating_mul(self, other: Axis2) -> Axis2 {
        Axis2::new(
            self.freq.saturating_mul(other.freq),
            self.time.saturating_mul(other.time),
        )
    }
}

impl fmt::Display for Axis2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.freq, self.time)
    }
}

/// Error produced when parsing an `<freq>x<time>` pair.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("expected <freq>x<time> (e.g. 3x3), got {input:?}")]
pub struct ParseAxisError {
    pub input: String,
}

impl FromStr for Axis2 {
    type Err = ParseAxisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseAxisError { input: s.to_string() };
        let (a, b) = s.split_once('x').ok_or_else(err)?;
        let freq = a.parse::<u32>().map_err(|_| err())?;
        let time = b.parse::<u32>().map_err(|_| err())?;
        Ok(Axis2 { freq, time })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_round_trip() {
        let a: Axis2 = "135x23".parse().unwrap();
        assert_eq!(a, Axis2::new(135, 23));
        assert_eq!(a.to_string(), "135x23");
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!("3".parse::<Axis2>().is_err());
        assert!("3x".parse::<Axis2>().is_err());
        assert!("x3".parse::<Axis2>().is_err());
        assert!("3x3x3".parse::<Axis2>().is_err());
        assert!("-1x3".parse::<Axis2>().is_err());
    }

    #[test]
    fn fits_within_is_per_axis() {
        assert!(Axis2::new(3, 5).fits_within(Axis2::new(3, 5)));
        assert!(!Axis2::new(4, 5).fits_within(Axis2::new(3, 9)));
        assert!(!Axis2::new(1, 9).fits_within(Axis2::new(3, 5)));
    }
}
