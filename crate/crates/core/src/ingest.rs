//! Located-post ingestion, spatial gridding and fractional user location.
//!
//! Input is line-delimited JSON, one post per line:
//!
//! ```text
//! {"id":"p1","user_id":"alice","mentions":["bob"],"text":"hi @bob",
//!  "lon":-2.6,"lat":51.4,"loc_kind":"place","ts":"2017-10-01T12:00:00Z"}
//! ```
//!
//! Only place-tagged posts inside the bounding box are kept. GPS-tagged
//! posts are dropped, as are self-mentions (the record itself is kept).

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geographic bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lon_min: f64,
    pub lat_min: f64,
    pub lon_max: f64,
    pub lat_max: f64,
}

impl BBox {
    /// England and Wales.
    pub const ENGLAND_WALES: BBox = BBox {
        lon_min: -5.8,
        lat_min: 49.9,
        lon_max: -1.2,
        lat_max: 55.9,
    };

    pub fn new(lon_min: f64, lat_min: f64, lon_max: f64, lat_max: f64) -> Result<Self> {
        let bbox = BBox {
            lon_min,
            lat_min,
            lon_max,
            lat_max,
        };
        bbox.validate()?;
        Ok(bbox)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lon_min, self.lat_min, self.lon_max, self.lat_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidGrid("bbox coordinates must be finite".into()));
        }
        if self.lon_min >= self.lon_max {
            return Err(Error::InvalidGrid(format!(
                "lon_min {} must be < lon_max {}",
                self.lon_min, self.lon_max
            )));
        }
        if self.lat_min >= self.lat_max {
            return Err(Error::InvalidGrid(format!(
                "lat_min {} must be < lat_max {}",
                self.lat_min, self.lat_max
            )));
        }
        Ok(())
    }

    /// Closed-box containment.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon_min && lon <= self.lon_max && lat >= self.lat_min && lat <= self.lat_max
    }
}

impl Default for BBox {
    fn default() -> Self {
        BBox::ENGLAND_WALES
    }
}

impl FromStr for BBox {
    type Err = Error;

    /// Parses `lonmin,latmin,lonmax,latmax`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidGrid(format!("bad bbox {s:?}: {e}")))?;
        match parts.as_slice() {
            &[a, b, c, d] => BBox::new(a, b, c, d),
            _ => Err(Error::InvalidGrid(format!(
                "bbox needs 4 comma-separated values, got {s:?}"
            ))),
        }
    }
}

/// An `X × X` grid laid over a bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BBox,
    pub resolution: u32,
}

impl GridSpec {
    pub fn new(bbox: BBox, resolution: u32) -> Result<Self> {
        let grid = GridSpec { bbox, resolution };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if self.resolution < 2 {
            return Err(Error::InvalidGrid(format!(
                "resolution must be at least 2, got {}",
                self.resolution
            )));
        }
        Ok(())
    }

    pub fn cell_width(&self) -> f64 {
        (self.bbox.lon_max - self.bbox.lon_min) / self.resolution as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.bbox.lat_max - self.bbox.lat_min) / self.resolution as f64
    }

    /// Tile polygon corners `(lon, lat)`, counter-clockwise from the south-west corner.
    pub fn tile_bounds(&self, tile: TileId) -> [(f64, f64); 4] {
        let (w, h) = (self.cell_width(), self.cell_height());
        let x0 = self.bbox.lon_min + tile.col as f64 * w;
        let y0 = self.bbox.lat_min + tile.row as f64 * h;
        [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)]
    }
}

/// Grid cell index. `row` grows northwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileId {
    pub col: u32,
    pub row: u32,
}

impl TileId {
    pub const fn new(col: u32, row: u32) -> Self {
        TileId { col, row }
    }
}

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.col, self.row)
    }
}

/// Maps a point to its grid cell. Cells are half-open except that the
/// maximum edge of the box belongs to the last cell.
pub fn tile_of(lon: f64, lat: f64, grid: &GridSpec) -> Result<TileId> {
    let b = &grid.bbox;
    if !(lon.is_finite() && lat.is_finite()) || !b.contains(lon, lat) {
        return Err(Error::OutOfRange { lon, lat });
    }
    let x = grid.resolution as f64;
    let last = grid.resolution - 1;
    let col = (x * (lon - b.lon_min) / (b.lon_max - b.lon_min)).floor() as u32;
    let row = (x * (lat - b.lat_min) / (b.lat_max - b.lat_min)).floor() as u32;
    Ok(TileId::new(col.min(last), row.min(last)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocationKind {
    #[serde(rename = "place")]
    PlaceTag,
    #[serde(rename = "gps")]
    Gps,
}

/// One line of the ingestion format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    pub user_id: String,
    #[serde(default)]
    pub mentions: Vec<String>,
    pub text: String,
    pub lon: f64,
    pub lat: f64,
    pub loc_kind: LocationKind,
    pub ts: DateTime<Utc>,
}

/// A located, place-tagged post that survived filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: String,
    pub author_id: String,
    pub mentioned_ids: Vec<String>,
    pub text: String,
    pub lon: f64,
    pub lat: f64,
    pub location_kind: LocationKind,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub gps_dropped: u64,
    pub out_of_bbox: u64,
    pub malformed: u64,
    pub empty_after_clean: u64,
}

impl RejectionCounts {
    pub fn total(&self) -> u64 {
        self.gps_dropped + self.out_of_bbox + self.malformed + self.empty_after_clean
    }

    fn add(&mut self, other: &RejectionCounts) {
        self.gps_dropped += other.gps_dropped;
        self.out_of_bbox += other.out_of_bbox;
        self.malformed += other.malformed;
        self.empty_after_clean += other.empty_after_clean;
    }
}

enum LineOutcome {
    Kept(PostRecord),
    Gps,
    OutOfBbox,
    Malformed,
    Empty,
}

fn classify_line(line: &str, bbox: &BBox) -> LineOutcome {
    let raw: RawPost = match serde_json::from_str(line) {
        Ok(raw) => raw,
        Err(_) => return LineOutcome::Malformed,
    };
    if raw.id.is_empty() || raw.user_id.is_empty() || !raw.lon.is_finite() || !raw.lat.is_finite() {
        return LineOutcome::Malformed;
    }
    if raw.loc_kind == LocationKind::Gps {
        return LineOutcome::Gps;
    }
    if !bbox.contains(raw.lon, raw.lat) {
        return LineOutcome::OutOfBbox;
    }
    if raw.text.trim().is_empty() {
        return LineOutcome::Empty;
    }
    let author = raw.user_id;
    let mentioned_ids = raw
        .mentions
        .into_iter()
        .filter(|m| !m.is_empty() && *m != author)
        .collect();
    LineOutcome::Kept(PostRecord {
        post_id: raw.id,
        author_id: author,
        mentioned_ids,
        text: raw.text,
        lon: raw.lon,
        lat: raw.lat,
        location_kind: raw.loc_kind,
        timestamp: raw.ts,
    })
}

/// Parses a line-delimited record stream.
///
/// A single bad line is counted as malformed and skipped; only a failing
/// reader is fatal. Every input line is accounted for either as a kept
/// record or in exactly one rejection bucket.
pub fn parse_posts<R: BufRead>(
    reader: R,
    bbox: &BBox,
) -> Result<(Vec<PostRecord>, RejectionCounts)> {
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    Ok(parse_lines(&lines, bbox))
}

pub fn parse_lines<S: AsRef<str> + Sync>(
    lines: &[S],
    bbox: &BBox,
) -> (Vec<PostRecord>, RejectionCounts) {
    let outcomes: Vec<LineOutcome> = lines
        .par_iter()
        .map(|l| classify_line(l.as_ref(), bbox))
        .collect();
    let mut posts = Vec::with_capacity(outcomes.len());
    let mut counts = RejectionCounts::default();
    for outcome in outcomes {
        match outcome {
            LineOutcome::Kept(p) => posts.push(p),
            LineOutcome::Gps => counts.gps_dropped += 1,
            LineOutcome::OutOfBbox => counts.out_of_bbox += 1,
            LineOutcome::Malformed => counts.malformed += 1,
            LineOutcome::Empty => counts.empty_after_clean += 1,
        }
    }
    (posts, counts)
}

/// Parses several streams in order and concatenates their output.
pub fn parse_many<R: BufRead>(
    readers: impl IntoIterator<Item = R>,
    bbox: &BBox,
) -> Result<(Vec<PostRecord>, RejectionCounts)> {
    let mut posts = Vec::new();
    let mut counts = RejectionCounts::default();
    for reader in readers {
        let (p, c) = parse_posts(reader, bbox)?;
        posts.extend(p);
        counts.add(&c);
    }
    Ok((posts, counts))
}

/// Per-user distribution over tiles, proportional to posting frequency.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserLocationMap {
    users: BTreeMap<String, Vec<(TileId, f64)>>,
}

impl UserLocationMap {
    pub fn get(&self, user: &str) -> Option<&[(TileId, f64)]> {
        self.users.get(user).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(TileId, f64)])> {
        self.users.iter().map(|(u, t)| (u.as_str(), t.as_slice()))
    }

    /// The tile carrying the largest weight; ties go to the smallest tile.
    pub fn majority_tile(&self, user: &str) -> Option<TileId> {
        let tiles = self.users.get(user)?;
        // tiles are sorted ascending, so strict `>` keeps the smallest on ties
        let mut best: Option<(TileId, f64)> = None;
        for &(t, w) in tiles {
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((t, w));
            }
        }
        best.map(|(t, _)| t)
    }
}

/// Locates every author fractionally over the tiles they post from.
pub fn locate_users(posts: &[PostRecord], grid: &GridSpec) -> Result<UserLocationMap> {
    grid.validate()?;
    let mut counts: BTreeMap<&str, BTreeMap<TileId, u64>> = BTreeMap::new();
    for post in posts {
        let tile = tile_of(post.lon, post.lat, grid)?;
        *counts
            .entry(post.author_id.as_str())
            .or_default()
            .entry(tile)
            .or_insert(0) += 1;
    }
    let users = counts
        .into_iter()
        .map(|(user, tiles)| {
            let total: u64 = tiles.values().sum();
            let weights = tiles
                .into_iter()
                .map(|(t, n)| (t, n as f64 / total as f64))
                .collect();
            (user.to_string(), weights)
        })
        .collect();
    Ok(UserLocationMap { users })
}
