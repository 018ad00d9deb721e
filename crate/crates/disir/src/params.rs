//! Flat parameter vectors with a named-slice registry.
//!
//! Models and proposals store their parameters (`theta`, `phi`) as flat
//! `Vec<f64>` so that generic estimators and optimizers can treat them as
//! plain vectors, while model code addresses components by name through a
//! [`ParamLayout`].

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

/// Registry mapping slice names to ranges of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    slices: Vec<(String, Range<usize>)>,
    len: usize,
}

impl ParamLayout {
    /// Builds a layout from `(name, length)` pairs, laid out contiguously in
    /// the given order.
    pub fn new<I, S>(parts: I) -> Self
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut slices = Vec::new();
        let mut offset = 0;
        for (name, len) in parts {
            slices.push((name.into(), offset..offset + len));
            offset += len;
        }
        ParamLayout { slices, len: offset }
    }

    /// Total length of the flat vector described by this layout.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Range of the named slice, if registered.
    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.slices
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
    }

    /// Borrows the named slice out of a flat vector.
    ///
    /// Panics if the name is unknown or `values` does not match the layout.
    pub fn slice<'a>(&self, values: &'a [f64], name: &str) -> &'a [f64] {
        assert_eq!(values.len(), self.len, "parameter vector length mismatch");
        let r = self
            .range(name)
            .unwrap_or_else(|| panic!("unknown parameter slice `{name}`"));
        &values[r]
    }

    /// Mutable variant of [`Self::slice`].
    pub fn slice_mut<'a>(&self, values: &'a mut [f64], name: &str) -> &'a mut [f64] {
        assert_eq!(values.len(), self.len, "parameter vector length mismatch");
        let r = self
            .range(name)
            .unwrap_or_else(|| panic!("unknown parameter slice `{name}`"));
        &mut values[r]
    }

    /// Registered slice names in layout order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slices.iter().map(|(n, _)| n.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn layout_addresses_named_slices() {
        let layout = ParamLayout::new([("theta0", 2), ("theta1", 6)]);
        assert_eq!(layout.len(), 8);
        assert_eq!(layout.range("theta0"), Some(0..2));
        assert_eq!(layout.range("theta1"), Some(2..8));
        assert_eq!(layout.range("missing"), None);

        let v: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert_eq!(layout.slice(&v, "theta0"), &[0.0, 1.0]);
        assert_eq!(layout.slice(&v, "theta1"), &v[2..8]);
    }

    #[test]
    fn slice_mut_writes_through() {
        let layout = ParamLayout::new([("a", 1), ("b", 2)]);
        let mut v = vec![0.0; 3];
        layout.slice_mut(&mut v, "b")[1] = 7.0;
        assert_eq!(v, vec![0.0, 0.0, 7.0]);
    }

    #[test]
    #[should_panic(expected = "unknown parameter slice")]
    fn unknown_slice_panics() {
        let layout = ParamLayout::new([("a", 1)]);
        let v = vec![0.0];
        layout.slice(&v, "nope");
    }
}
