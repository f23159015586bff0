//! Web-mercator tile mathematics, quadkey addressing, and satellite-tile
//! acquisition from a local store or a remote endpoint.
//!
//! Tile store layout: `<root>/<level>/<quadkey>.png`. Remote sources are
//! configured by a URL template containing a `{quadkey}` placeholder and
//! retry transient failures with exponential backoff; decoded tiles are
//! cached on disk keyed by quadkey.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::numkit::Tensor;
use crate::{Error, Result};

const EARTH_RADIUS_M: f64 = 6_378_137.0;
pub const MAX_LATITUDE: f64 = 85.05113;
pub const TILE_PIXELS: u32 = 256;

/// Geographic point; latitude clamped to the mercator-safe band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || lat.abs() > MAX_LATITUDE {
            return Err(Error::CoordinateRange(format!("latitude {lat}")));
        }
        if !lon.is_finite() || !(-180.0..180.0).contains(&lon) {
            return Err(Error::CoordinateRange(format!("longitude {lon}")));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Web-mercator tile address at a zoom level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileCoord {
    pub x: u32,
    pub y: u32,
    pub level: u8,
}

impl TileCoord {
    pub fn new(x: u32, y: u32, level: u8) -> Result<Self> {
        if level < 1 || level > 23 {
            return Err(Error::CoordinateRange(format!("zoom level {level}")));
        }
        let max = 1u32 << level;
        if x >= max || y >= max {
            return Err(Error::CoordinateRange(format!(
                "tile ({x},{y}) out of range at level {level}"
            )));
        }
        Ok(TileCoord { x, y, level })
    }

    /// Geographic bounding box (south-west, north-east corners).
    pub fn bounds(&self) -> (GeoPoint, GeoPoint) {
        let n = f64::from(1u32 << self.level);
        let lon_w = f64::from(self.x) / n * 360.0 - 180.0;
        let lon_e = f64::from(self.x + 1) / n * 360.0 - 180.0;
        let lat_n = mercator_y_to_lat(f64::from(self.y) / n);
        let lat_s = mercator_y_to_lat(f64::from(self.y + 1) / n);
        (
            GeoPoint {
                lat: lat_s,
                lon: lon_w,
            },
            GeoPoint {
                lat: lat_n,
                lon: lon_e,
            },
        )
    }
}

fn mercator_y_to_lat(y: f64) -> f64 {
    let n = std::f64::consts::PI * (1.0 - 2.0 * y);
    n.sinh().atan().to_degrees()
}

/// Map a point to the grid tile containing it.
///
/// ```
/// use mvre::geotile::{latlon_to_tile, tile_to_quadkey, quadkey_to_tile, GeoPoint};
///
/// let p = GeoPoint::new(35.5946, -82.5540)?;
/// let tile = latlon_to_tile(p, 16)?;
/// let quadkey = tile_to_quadkey(tile);
/// assert_eq!(quadkey.as_str(), "0320030123201031");
/// assert_eq!(quadkey_to_tile(&quadkey)?, tile);
/// # Ok::<(), mvre::Error>(())
/// ```
pub fn latlon_to_tile(p: GeoPoint, level: u8) -> Result<TileCoord> {
    if level < 1 || level > 23 {
        return Err(Error::CoordinateRange(format!("zoom level {level}")));
    }
    let map_size = f64::from(TILE_PIXELS) * f64::from(1u32 << level);
    let px = (p.lon + 180.0) / 360.0 * map_size;
    let sin_lat = p.lat.to_radians().sin();
    let py = (0.5 - ((1.0 + sin_lat) / (1.0 - sin_lat)).ln() / (4.0 * std::f64::consts::PI))
        * map_size;
    let max = (1u32 << level) - 1;
    let clip = |v: f64| -> u32 { (v / 256.0).floor().clamp(0.0, f64::from(max)) as u32 };
    Ok(TileCoord {
        x: clip(px),
        y: clip(py),
        level,
    })
}

/// Base-4 tile address, one digit per zoom level.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Quadkey(String);

impl Quadkey {
    pub fn parse(s: &str) -> Result<Self> {
        if s.is_empty() || s.len() > 23 || s.bytes().any(|b| !(b'0'..=b'3').contains(&b)) {
            return Err(Error::InvalidValue(format!("quadkey '{s}'")));
        }
        Ok(Quadkey(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn level(&self) -> u8 {
        self.0.len() as u8
    }
}

impl fmt::Display for Quadkey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Digit i (most significant first) interleaves bit i of x and y.
pub fn tile_to_quadkey(t: TileCoord) -> Quadkey {
    let mut digits = String::with_capacity(t.level as usize);
    for i in (0..t.level).rev() {
        let bx = (t.x >> i) & 1;
        let by = (t.y >> i) & 1;
        digits.push(char::from(b'0' + (bx + 2 * by) as u8));
    }
    Quadkey(digits)
}

pub fn quadkey_to_tile(q: &Quadkey) -> Result<TileCoord> {
    let level = q.level();
    let mut x = 0u32;
    let mut y = 0u32;
    for b in q.0.bytes() {
        let d = b - b'0';
        x = (x << 1) | u32::from(d & 1);
        y = (y << 1) | u32::from(d >> 1);
    }
    TileCoord::new(x, y, level)
}

/// Meters of ground per pixel at a latitude and zoom level.
///
/// ```
/// use mvre::geotile::ground_resolution;
///
/// let footprint = ground_resolution(0.0, 16) * 256.0;
/// assert!((610.0..=613.0).contains(&footprint));
/// ```
pub fn ground_resolution(lat_deg: f64, level: u8) -> f64 {
    let map_size = f64::from(TILE_PIXELS) * f64::from(1u32 << level);
    2.0 * std::f64::consts::PI * EARTH_RADIUS_M * lat_deg.to_radians().cos() / map_size
}

/// Decoded H x W x 3 image with channel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match t.shape() {
            [_, _, 3] => {}
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "image tensor must be [h,w,3], got {other:?}"
                )))
            }
        }
        if t.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidValue("image values outside [0,1]".into()));
        }
        Ok(ImageTensor(t))
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::MalformedImage("<bytes>".into(), e.to_string()))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data: Vec<f64> = img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
        Ok(ImageTensor(Tensor::new(vec![h, w, 3], data)?))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let [h, w, _] = [self.height(), self.width(), 3];
        let raw: Vec<u8> = self
            .0
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = image::RgbImage::from_raw(w as u32, h as u32, raw)
            .expect("raw buffer matches dims");
        let mut out = Vec::new();
        img.write_to(
            &mut std::io::Cursor::new(&mut out),
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::MalformedImage("<encode>".into(), e.to_string()))?;
        Ok(out)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let base = (y * self.width() + x) * 3;
        let d = self.0.data();
        [d[base], d[base + 1], d[base + 2]]
    }
}

/// Outcome bookkeeping for a single tile fetch.
#[derive(Debug, Clone, Copy, Default)]
pub struct FetchStats {
    pub retries: u32,
    pub from_cache: bool,
    pub remote_requests: u32,
}

/// Where tiles come from: a directory store or a remote URL template.
#[derive(Debug, Clone)]
pub enum TileSource {
    Store { root: PathBuf },
    Remote(RemoteSource),
}

#[derive(Debug, Clone)]
pub struct RemoteSource {
    /// URL template containing a `{quadkey}` placeholder.
    pub template: String,
    pub cache_dir: PathBuf,
    pub max_retries: u32,
    pub backoff: Duration,
}

impl TileSource {
    pub fn store<P: Into<PathBuf>>(root: P) -> Self {
        TileSource::Store { root: root.into() }
    }

    pub fn remote<P: Into<PathBuf>>(template: &str, cache_dir: P) -> Self {
        TileSource::Remote(RemoteSource {
            template: template.to_string(),
            cache_dir: cache_dir.into(),
            max_retries: 3,
            backoff: Duration::from_millis(20),
        })
    }

    pub fn fetch(&self, q: &Quadkey) -> Result<ImageTensor> {
        self.fetch_with_stats(q).map(|(img, _)| img)
    }

    pub fn fetch_with_stats(&self, q: &Quadkey) -> Result<(ImageTensor, FetchStats)> {
        match self {
            TileSource::Store { root } => {
                let path = tile_path(root, q);
                let bytes = std::fs::read(&path)
                    .map_err(|_| Error::MissingTile(q.to_string()))?;
                let img = ImageTensor::decode_png(&bytes)
                    .map_err(|e| remap_malformed(e, q))?;
                Ok((img, FetchStats::default()))
            }
            TileSource::Remote(remote) => remote.fetch(q),
        }
    }

    /// Fetch many tiles with a bounded worker pool; results keep input order.
    pub fn fetch_all(&self, quadkeys: &[Quadkey], workers: usize) -> Vec<Result<ImageTensor>> {
        let workers = workers.max(1);
        let next = AtomicUsize::new(0);
        let mut results: Vec<Option<Result<ImageTensor>>> = Vec::new();
        results.resize_with(quadkeys.len(), || None);
        let slots: Vec<std::sync::Mutex<Option<Result<ImageTensor>>>> =
            (0..quadkeys.len()).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers.min(quadkeys.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= quadkeys.len() {
                        break;
                    }
                    let r = self.fetch(&quadkeys[i]);
                    *slots[i].lock().unwrap() = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("worker filled slot"))
            .collect()
    }
}

fn tile_path(root: &Path, q: &Quadkey) -> PathBuf {
    root.join(q.level().to_string()).join(format!("{q}.png"))
}

fn remap_malformed(e: Error, q: &Quadkey) -> Error {
    match e {
        Error::MalformedImage(_, msg) => Error::MalformedImage(q.to_string(), msg),
        other => other,
    }
}

impl RemoteSource {
    fn fetch(&self, q: &Quadkey) -> Result<(ImageTensor, FetchStats)> {
        let cached = tile_path(&self.cache_dir, q);
        if let Ok(bytes) = std::fs::read(&cached) {
            let img = ImageTensor::decode_png(&bytes).map_err(|e| remap_malformed(e, q))?;
            return Ok((
                img,
                FetchStats {
                    from_cache: true,
                    ..Default::default()
                },
            ));
        }
        let url = self.template.replace("{quadkey}", q.as_str());
        let mut stats = FetchStats::default();
        let mut last_error = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                stats.retries += 1;
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            stats.remote_requests += 1;
            match http_get(&url) {
                Ok(HttpResponse { status: 200, body }) => {
                    let img =
                        ImageTensor::decode_png(&body).map_err(|e| remap_malformed(e, q))?;
                    write_atomic(&cached, &body)?;
                    return Ok((img, stats));
                }
                // a definitive miss is not retried
                Ok(HttpResponse { status: 404, .. }) => {
                    return Err(Error::MissingTile(q.to_string()))
                }
                Ok(HttpResponse { status, .. }) => {
                    last_error = format!("http status {status}");
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }
        Err(Error::RetryExhausted {
            quadkey: q.to_string(),
            attempts: self.max_retries + 1,
            last_error,
        })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("png.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct HttpResponse {
    status: u16,
    body: Vec<u8>,
}

/// Minimal blocking HTTP/1.1 GET, sufficient for the bundled mock server
/// and plain tile endpoints.
fn http_get(url: &str) -> std::io::Result<HttpResponse> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "http:// only"))?;
    let (host, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    let mut stream = TcpStream::connect(host)?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    write!(
        stream,
        "GET {path} HTTP/1.1\r\nHost: {host}\r\nConnection: close\r\n\r\n"
    )?;
    let mut reader = BufReader::new(stream);
    let mut status_line = String::new();
    reader.read_line(&mut status_line)?;
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "bad status line"))?;
    let mut content_length = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line
            .to_ascii_lowercase()
            .strip_prefix("content-length:")
            .map(|v| v.trim().to_string())
        {
            content_length = v.parse::<usize>().ok();
        }
    }
    let mut body = Vec::new();
    match content_length {
        Some(n) => {
            body.resize(n, 0);
            reader.read_exact(&mut body)?;
        }
        None => {
            reader.read_to_end(&mut body)?;
        }
    }
    Ok(HttpResponse { status, body })
}

/// In-process tile server for integration tests: serves `<dir>/<quadkey>.png`
/// over a local socket, optionally failing the first N requests with a 500.
pub struct MockTileServer {
    addr: String,
    requests: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl MockTileServer {
    pub fn start(dir: PathBuf, fail_first: usize) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = format!("{}", listener.local_addr()?);
        let requests = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(AtomicBool::new(false));
        let req = Arc::clone(&requests);
        let stop = Arc::clone(&shutdown);
        listener.set_nonblocking(true)?;
        let handle = std::thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let n = req.fetch_add(1, Ordering::SeqCst);
                        let _ = handle_request(stream, &dir, n < fail_first);
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(MockTileServer {
            addr,
            requests,
            shutdown,
            handle: Some(handle),
        })
    }

    /// URL template pointing at this server, with `{quadkey}` placeholder.
    pub fn template(&self) -> String {
        format!("http://{}/tiles/{{quadkey}}.png", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockTileServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_request(mut stream: TcpStream, dir: &Path, fail: bool) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    // drain headers
    loop {
        let mut h = String::new();
        reader.read_line(&mut h)?;
        if h.trim_end().is_empty() {
            break;
        }
    }
    if fail {
        return write_response(&mut stream, 500, b"transient failure");
    }
    let path = line.split_whitespace().nth(1).unwrap_or("/");
    let name = path.rsplit('/').next().unwrap_or("");
    match std::fs::read(dir.join(name)) {
        Ok(bytes) => write_response(&mut stream, 200, &bytes),
        Err(_) => write_response(&mut stream, 404, b"not found"),
    }
}

fn write_response(stream: &mut TcpStream, status: u16, body: &[u8]) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        _ => "Internal Server Error",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_maps_to_center_tile() {
        let p = GeoPoint::new(0.0, 0.0).unwrap();
        let t = latlon_to_tile(p, 1).unwrap();
        assert_eq!((t.x, t.y), (1, 1));
    }

    #[test]
    fn left_edge_tile() {
        let p = GeoPoint::new(0.0, -180.0).unwrap();
        let t = latlon_to_tile(p, 1).unwrap();
        assert_eq!((t.x, t.y), (0, 1));
    }

    #[test]
    fn midlatitude_round_trip_containment() {
        let p = GeoPoint::new(35.5950, -82.5515).unwrap();
        let t = latlon_to_tile(p, 16).unwrap();
        let (sw, ne) = t.bounds();
        assert!(sw.lat() <= p.lat() && p.lat() <= ne.lat());
        assert!(sw.lon() <= p.lon() && p.lon() <= ne.lon());
    }

    #[test]
    fn quadkey_origin() {
        let t = TileCoord::new(0, 0, 3).unwrap();
        assert_eq!(tile_to_quadkey(t).as_str(), "000");
    }

    #[test]
    fn quadkey_interleave_oracle_level3() {
        // independent per-bit interleave over all 64 tiles at level 3
        for x in 0..8u32 {
            for y in 0..8u32 {
                let mut expect = String::new();
                for i in (0..3).rev() {
                    let d = ((x >> i) & 1) + 2 * ((y >> i) & 1);
                    expect.push(char::from(b'0' + d as u8));
                }
                let t = TileCoord::new(x, y, 3).unwrap();
                assert_eq!(tile_to_quadkey(t).as_str(), expect);
                assert_eq!(quadkey_to_tile(&tile_to_quadkey(t)).unwrap(), t);
            }
        }
        assert_eq!(
            tile_to_quadkey(TileCoord::new(3, 5, 3).unwrap()).as_str(),
            "213"
        );
    }

    #[test]
    fn ground_resolution_anchors() {
        let eq = ground_resolution(0.0, 16);
        assert!((eq - 2.3887).abs() < 1e-3, "{eq}");
        let footprint = eq * 256.0;
        assert!((610.0..613.0).contains(&footprint), "{footprint}");
        let mid = ground_resolution(60.0, 16);
        assert!((mid - eq * 0.5).abs() < 1e-9);
        let ash = ground_resolution(35.595, 16);
        assert!((ash - 1.943).abs() < 1e-2, "{ash}");
    }

    #[test]
    fn longitude_monotone_in_tile_x() {
        let mut prev = 0;
        for i in 0..50 {
            let lon = -180.0 + f64::from(i) * 7.0;
            if lon >= 180.0 {
                break;
            }
            let t = latlon_to_tile(GeoPoint::new(35.0, lon).unwrap(), 10).unwrap();
            assert!(t.x >= prev);
            prev = t.x;
        }
    }

    #[test]
    fn invalid_coordinates_rejected() {
        assert!(GeoPoint::new(86.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 180.0).is_err());
        assert!(TileCoord::new(2, 0, 1).is_err());
        assert!(Quadkey::parse("0142").is_err());
        assert!(Quadkey::parse("").is_err());
    }

    #[test]
    fn black_store_tile_normalizes_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let q = Quadkey::parse("213").unwrap();
        let black = ImageTensor::from_tensor(Tensor::zeros(vec![32, 32, 3])).unwrap();
        let path = dir.path().join("3");
        std::fs::create_dir_all(&path).unwrap();
        std::fs::write(path.join("213.png"), black.encode_png().unwrap()).unwrap();
        let src = TileSource::store(dir.path());
        let img = src.fetch(&q).unwrap();
        assert!(img.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_store_tile_is_missing_error() {
        let dir = tempfile::tempdir().unwrap();
        let src = TileSource::store(dir.path());
        match src.fetch(&Quadkey::parse("0123").unwrap()) {
            Err(Error::MissingTile(q)) => assert_eq!(q, "0123"),
            other => panic!("expected MissingTile, got {other:?}"),
        }
    }
}
