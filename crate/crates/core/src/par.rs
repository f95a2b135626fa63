//! Shared-field writer for per-line parallel sweeps.
//!
//! An ADI sweep updates every grid line of one axis family independently;
//! the lines partition the node set, so writes are disjoint by construction
//! even though x- and y-lines are strided (only z-lines are contiguous).
//! This wrapper makes that contract explicit instead of scattering raw
//! pointer juggling through the sweep code.

use std::marker::PhantomData;

/// Write handle over a field that multiple sweep tasks share.
///
/// Safety contract: concurrent tasks must write disjoint index sets. The
/// sweep drivers guarantee this by giving each task exactly one grid line.
pub(crate) struct DisjointWriter<'a> {
    ptr: *mut f64,
    len: usize,
    _borrow: PhantomData<&'a mut [f64]>,
}

// SAFETY: all mutation goes through `write`, whose caller contract demands
// disjoint indices across threads; disjoint &mut access is Sync-safe.
unsafe impl Sync for DisjointWriter<'_> {}

impl<'a> DisjointWriter<'a> {
    pub fn new(values: &'a mut [f64]) -> Self {
        Self { ptr: values.as_mut_ptr(), len: values.len(), _borrow: PhantomData }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// Store `v` at `flat`.
    ///
    /// SAFETY: no other thread may touch `flat` while `self` is shared.
    #[inline]
    pub unsafe fn write(&self, flat: usize, v: f64) {
        debug_assert!(flat < self.len);
        // SAFETY: in bounds per the assertion; exclusivity per the contract.
        *self.ptr.add(flat) = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rayon::prelude::*;

    #[test]
    fn strided_parallel_writes_land_where_sent() {
        let mut data = vec![0.0; 1024];
        {
            let writer = DisjointWriter::new(&mut data);
            // 32 "lines" of stride 32, each written by one task.
            (0..32usize).into_par_iter().for_each(|line| {
                for m in 0..32 {
                    // SAFETY: index sets {line + 32 m} are disjoint across lines.
                    unsafe { writer.write(line + 32 * m, (line * 1000 + m) as f64) };
                }
            });
        }
        for line in 0..32 {
            for m in 0..32 {
                assert_eq!(data[line + 32 * m], (line * 1000 + m) as f64);
            }
        }
    }
}
