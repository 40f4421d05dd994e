#![no_main]

use hoplite_core::cache::{decode_snapshot, CacheConfig, PlanCache};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = decode_snapshot(data) {
        // anything accepted must be internally consistent and re-encode
        let cache = PlanCache::new(CacheConfig::default()).unwrap();
        for e in entries {
            assert!(e.verify());
            cache.store_discretized(e.vector, e.bhtp).unwrap();
        }
        let again = decode_snapshot(&cache.encode_snapshot()).unwrap();
        assert_eq!(again.len(), cache.len());
    }
});
