//! Peak heap use of the materialising merge against the patch-weighted
//! fast path on a 336×336 image.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use adatok::fixtures::piecewise_fixture;
use adatok::object_merge::{merge, merge_fast, MergeOptions};

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

fn peak_during(f: impl FnOnce()) -> usize {
    let base = CURRENT.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    f();
    PEAK.load(Ordering::Relaxed) - base
}

fn main() {
    let dim = 64;
    let fx = piecewise_fixture(12, dim, 1).expect("valid fixture");
    let opts = MergeOptions::default();
    let field_bytes = 336 * 336 * dim * std::mem::size_of::<f32>();
    let slow = peak_during(|| {
        merge(&fx.features, &fx.candidates, &opts).unwrap();
    });
    let fast = peak_during(|| {
        merge_fast(&fx.features, &fx.candidates, &opts).unwrap();
    });
    println!("upsampled field: {field_bytes} bytes");
    println!("merge peak:      {slow} bytes");
    println!("merge_fast peak: {fast} bytes");
    assert!(fast < field_bytes);
}
