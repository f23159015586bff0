//! Remote tile fetching against the in-process mock server: retries,
//! definitive misses, and cache behavior.

use std::time::Instant;

use mvre::geotile::{ImageTensor, MockTileServer, Quadkey, TileSource};
use mvre::numkit::Tensor;
use mvre::Error;

fn sample_quadkey() -> Quadkey {
    Quadkey::parse("0231").unwrap()
}

fn write_sample_tile(dir: &std::path::Path, quadkey: &Quadkey) {
    let data: Vec<f64> = (0..8 * 8 * 3).map(|i| f64::from(i as u8 % 7) / 10.0).collect();
    let img = ImageTensor::from_tensor(Tensor::new(vec![8, 8, 3], data).unwrap()).unwrap();
    std::fs::write(
        dir.join(format!("{quadkey}.png")),
        img.encode_png().unwrap(),
    )
    .unwrap();
}

#[test]
fn transient_failures_are_retried_then_succeed() {
    let tiles = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let q = sample_quadkey();
    write_sample_tile(tiles.path(), &q);

    let server = MockTileServer::start(tiles.path().to_path_buf(), 2).unwrap();
    let source = TileSource::remote(&server.template(), cache.path());

    let (img, stats) = source.fetch_with_stats(&q).unwrap();
    assert_eq!(img.height(), 8);
    assert_eq!(stats.retries, 2);
    assert_eq!(stats.remote_requests, 3);
    assert!(!stats.from_cache);
    assert_eq!(server.request_count(), 3);
}

#[test]
fn missing_tile_is_not_retried() {
    let tiles = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let server = MockTileServer::start(tiles.path().to_path_buf(), 0).unwrap();
    let source = TileSource::remote(&server.template(), cache.path());

    let q = sample_quadkey();
    let err = source.fetch(&q).unwrap_err();
    assert!(matches!(err, Error::MissingTile(ref k) if k == q.as_str()));
    assert_eq!(server.request_count(), 1);
}

#[test]
fn persistent_failure_exhausts_retries() {
    let tiles = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let q = sample_quadkey();
    write_sample_tile(tiles.path(), &q);

    let server = MockTileServer::start(tiles.path().to_path_buf(), usize::MAX).unwrap();
    let source = TileSource::remote(&server.template(), cache.path());

    let start = Instant::now();
    let err = source.fetch(&q).unwrap_err();
    match err {
        Error::RetryExhausted { attempts, .. } => assert_eq!(attempts, 4),
        other => panic!("expected RetryExhausted, got {other}"),
    }
    // backoff 20ms doubling: 20 + 40 + 80 = 140ms minimum
    assert!(start.elapsed().as_millis() >= 140);
    assert_eq!(server.request_count(), 4);
}

#[test]
fn second_fetch_hits_cache_without_remote_requests() {
    let tiles = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let q = sample_quadkey();
    write_sample_tile(tiles.path(), &q);

    let server = MockTileServer::start(tiles.path().to_path_buf(), 0).unwrap();
    let source = TileSource::remote(&server.template(), cache.path());

    let (first, stats1) = source.fetch_with_stats(&q).unwrap();
    assert_eq!(stats1.remote_requests, 1);

    let (second, stats2) = source.fetch_with_stats(&q).unwrap();
    assert!(stats2.from_cache);
    assert_eq!(stats2.remote_requests, 0);
    assert_eq!(first.tensor().data(), second.tensor().data());
    assert_eq!(server.request_count(), 1);

    // the cache is a valid tile store on its own
    let store = TileSource::store(cache.path());
    let from_store = store.fetch(&q).unwrap();
    assert_eq!(from_store.tensor().data(), first.tensor().data());
}

#[test]
fn fetch_all_preserves_order_over_remote() {
    let tiles = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let quadkeys: Vec<Quadkey> = ["0231", "0232", "0233"]
        .iter()
        .map(|s| Quadkey::parse(s).unwrap())
        .collect();
    for q in &quadkeys {
        write_sample_tile(tiles.path(), q);
    }
    let server = MockTileServer::start(tiles.path().to_path_buf(), 0).unwrap();
    let source = TileSource::remote(&server.template(), cache.path());

    let results = source.fetch_all(&quadkeys, 3);
    assert_eq!(results.len(), 3);
    for r in results {
        assert!(r.is_ok());
    }
    assert_eq!(server.request_count(), 3);
}
