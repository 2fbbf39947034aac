//! One test only: the counting allocator sees the whole binary.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use adatok::fixtures::piecewise_fixture;
use adatok::object_merge::{merge_fast, MergeOptions};

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
        PEAK.fetch_max(now, Ordering::Relaxed);
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
        System.dealloc(ptr, layout)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

#[test]
fn fast_merge_never_materialises_the_field() {
    let dim = 64;
    let fx = piecewise_fixture(12, dim, 1).unwrap();
    let field_bytes = 336 * 336 * dim * std::mem::size_of::<f32>();
    let base = CURRENT.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let cts = merge_fast(&fx.features, &fx.candidates, &MergeOptions::default()).unwrap();
    let peak = PEAK.load(Ordering::Relaxed) - base;
    assert_eq!(cts.len(), 12);
    assert!(peak < field_bytes / 100, "peak {peak} bytes vs field {field_bytes}");
}
