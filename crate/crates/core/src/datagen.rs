//! Seeded synthetic catalogs and interaction logs.
//!
//! Every listing has a hidden latent `z = [z_core; z_detail]`. Primary views
//! (primary image, title) only see `z_core`. Each auxiliary view sees `z_core`
//! plus a random subset of the detail coordinates, so the auxiliaries carry
//! information the primaries lack. Interaction queries are drawn from the full
//! latent, which makes the detail block matter for retrieval.
//!
//! Raw features are `P_modality z + noise` with one fixed random projection per
//! modality. All randomness derives from `SyntheticConfig::seed` through
//! independent ChaCha streams, so a config determines the dataset byte for byte.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LISTINGS_FILE: &str = "listings.jsonl";
pub const INTERACTIONS_FILE: &str = "interactions.jsonl";

const STREAM_WORLD: u64 = 1;
const STREAM_LISTINGS: u64 = 2;
const STREAM_PSEUDO_QUERIES: u64 = 3;
const STREAM_INTERACTIONS: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_listings: usize,
    pub num_categories: usize,
    /// Image views per listing, primary included.
    pub image_views_n: usize,
    /// Text views per listing: the title plus pseudo-queries.
    pub text_views_m: usize,
    pub latent_core_dim: usize,
    pub latent_detail_dim: usize,
    pub raw_dim: usize,
    pub view_noise: f64,
    pub query_noise: f64,
    /// Interactions generated per listing in the catalog.
    pub interactions_per_listing_rate: f64,
    /// Fraction of listings that can receive clicks at all.
    pub listing_coverage: f64,
    /// Probability that an auxiliary image view exposes a given detail coordinate.
    pub image_detail_fraction: f64,
    /// Same, for pseudo-query views.
    pub text_detail_fraction: f64,
    /// Standard deviation of category centroids in the core block.
    pub category_spread: f64,
    /// Standard deviation of a listing's core latent around its centroid.
    pub within_category_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_listings: 1000,
            num_categories: 12,
            image_views_n: 6,
            text_views_m: 10,
            latent_core_dim: 8,
            latent_detail_dim: 8,
            raw_dim: 32,
            view_noise: 0.3,
            query_noise: 0.4,
            interactions_per_listing_rate: 0.29,
            listing_coverage: 0.15,
            image_detail_fraction: 0.8,
            text_detail_fraction: 0.2,
            category_spread: 1.0,
            within_category_spread: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::ConfigInvalid(msg.to_string()));
        if self.num_categories == 0 || self.image_views_n == 0 || self.text_views_m == 0 {
            return fail("category and view counts must be at least 1");
        }
        if self.latent_core_dim == 0 || self.raw_dim == 0 {
            return fail("latent_core_dim and raw_dim must be at least 1");
        }
        let nonneg = [self.view_noise, self.query_noise, self.category_spread, self.within_category_spread];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return fail("noise and spread parameters must be finite and nonnegative");
        }
        let unit = [
            self.interactions_per_listing_rate,
            self.listing_coverage,
            self.image_detail_fraction,
            self.text_detail_fraction,
        ];
        if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return fail("rates and fractions must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_core_dim + self.latent_detail_dim
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Listing {
    pub id: String,
    pub category: String,
    /// Raw image features; index 0 is the primary image.
    pub image_views: Vec<Vec<f64>>,
    /// Raw text features; index 0 is the title, the rest are pseudo-queries.
    pub text_views: Vec<Vec<f64>>,
    /// Ground-truth latent, kept for diagnostics.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub latent: Vec<f64>,
}

impl Listing {
    pub fn image_count(&self) -> usize {
        self.image_views.len()
    }

    pub fn text_count(&self) -> usize {
        self.text_views.len()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.image_views.is_empty() || self.text_views.is_empty() {
            return Err(format!("listing {:?} needs at least one view per modality", self.id));
        }
        for views in [&self.image_views, &self.text_views] {
            let d = views[0].len();
            if d == 0 || views.iter().any(|v| v.len() != d) {
                return Err(format!("listing {:?} has inconsistent view dimensions", self.id));
            }
            if views.iter().flatten().any(|x| !x.is_finite()) {
                return Err(format!("listing {:?} has non-finite features", self.id));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    #[serde(rename = "query")]
    pub query_features: Vec<f64>,
    pub clicked_id: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub listings: Vec<Listing>,
    pub interactions: Vec<Interaction>,
}

/// Input for generating the auxiliary text views of one listing.
///
/// A language-model backed provider would prompt with the listing's title and
/// ask for short, varied shopper-style queries. The synthetic provider instead
/// reads `latent`, which stands in for the world knowledge such a model brings
/// beyond the title itself.
pub struct PseudoQueryRequest<'a> {
    pub listing_id: &'a str,
    pub title: &'a [f64],
    pub latent: &'a [f64],
    pub count: usize,
}

pub trait PseudoQueryProvider {
    fn pseudo_queries(&mut self, request: &PseudoQueryRequest<'_>) -> Vec<Vec<f64>>;
}

/// Fixed random maps shared by catalog and interaction generation.
#[derive(Clone, Debug)]
struct World {
    centroids: Vec<Vec<f64>>,
    image_projection: Projection,
    text_projection: Projection,
}

#[derive(Clone, Debug)]
struct Projection {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl Projection {
    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (cols as f64).sqrt();
        let entries = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { rows, cols, entries }
    }

    /// `P z + noise * N(0, I)`, using only the latent coordinates `keep` accepts.
    fn observe(&self, latent: &[f64], keep: impl Fn(usize) -> bool, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let row = &self.entries[r * self.cols..(r + 1) * self.cols];
                let clean: f64 = row.iter().zip(latent).enumerate().filter(|(k, _)| keep(*k)).map(|(_, (p, z))| p * z).sum();
                clean + noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    }
}

impl World {
    fn new(config: &SyntheticConfig) -> Self {
        let mut rng = stream(config.seed, STREAM_WORLD);
        let centroids = (0..config.num_categories)
            .map(|_| {
                (0..config.latent_core_dim)
                    .map(|_| config.category_spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let d = config.latent_dim();
        let image_projection = Projection::random(config.raw_dim, d, &mut rng);
        let text_projection = Projection::random(config.raw_dim, d, &mut rng);
        Self { centroids, image_projection, text_projection }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Random subset of detail coordinates, each kept with probability `fraction`.
fn detail_mask(config: &SyntheticConfig, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..config.latent_detail_dim).map(|_| rng.random::<f64>() < fraction).collect()
}

/// Observes the core block plus the detail coordinates selected by `mask`.
fn auxiliary_view(config: &SyntheticConfig, projection: &Projection, latent: &[f64], mask: &[bool], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let core = config.latent_core_dim;
    projection.observe(latent, |k| k < core || mask[k - core], config.view_noise, rng)
}

/// The shipped provider: each pseudo-query observes the core latent plus a
/// random subset of detail coordinates through the text projection.
pub struct SyntheticQueryProvider {
    config: SyntheticConfig,
    projection: Projection,
    rng: ChaCha8Rng,
}

impl SyntheticQueryProvider {
    pub fn new(config: &SyntheticConfig) -> Self {
        let world = World::new(config);
        Self { config: config.clone(), projection: world.text_projection, rng: stream(config.seed, STREAM_PSEUDO_QUERIES) }
    }
}

impl PseudoQueryProvider for SyntheticQueryProvider {
    fn pseudo_queries(&mut self, request: &PseudoQueryRequest<'_>) -> Vec<Vec<f64>> {
        (0..request.count)
            .map(|_| {
                let mask = detail_mask(&self.config, self.config.text_detail_fraction, &mut self.rng);
                auxiliary_view(&self.config, &self.projection, request.latent, &mask, &mut self.rng)
            })
            .collect()
    }
}

pub fn generate_catalog(config: &SyntheticConfig) -> Result<Vec<Listing>> {
    config.validate()?;
    let mut provider = SyntheticQueryProvider::new(config);
    generate_catalog_with(config, &mut provider)
}

/// Generates a catalog, delegating the pseudo-query views to `provider`.
pub fn generate_catalog_with(config: &SyntheticConfig, provider: &mut dyn PseudoQueryProvider) -> Result<Vec<Listing>> {
    config.validate()?;
    let world = World::new(config);
    let mut rng = stream(config.seed, STREAM_LISTINGS);
    let core = config.latent_core_dim;
    let width = digits(config.num_categories);

    let mut listings = Vec::with_capacity(config.num_listings);
    for i in 0..config.num_listings {
        let category = rng.random_range(0..config.num_categories);
        let mut latent: Vec<f64> = world.centroids[category]
            .iter()
            .map(|c| c + config.within_category_spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        latent.extend((0..config.latent_detail_dim).map(|_| rng.sample::<f64, _>(StandardNormal)));

        let mut image_views = Vec::with_capacity(config.image_views_n);
        image_views.push(world.image_projection.observe(&latent, |k| k < core, config.view_noise, &mut rng));
        for _ in 1..config.image_views_n {
            let mask = detail_mask(config, config.image_detail_fraction, &mut rng);
            image_views.push(auxiliary_view(config, &world.image_projection, &latent, &mask, &mut rng));
        }

        let title = world.text_projection.observe(&latent, |k| k < core, config.view_noise, &mut rng);
        let id = format!("L{i:07}");
        let queries = provider.pseudo_queries(&PseudoQueryRequest {
            listing_id: &id,
            title: &title,
            latent: &latent,
            count: config.text_views_m - 1,
        });
        let mut text_views = Vec::with_capacity(config.text_views_m);
        text_views.push(title);
        text_views.extend(queries);

        listings.push(Listing {
            id,
            category: format!("cat-{category:0width$}"),
            image_views,
            text_views,
            latent,
        });
    }
    Ok(listings)
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).ilog10() as usize + 1
}

/// Click log: `round(rate * |catalog|)` queries, each targeting a listing
/// drawn uniformly from a seeded pool covering `listing_coverage` of the
/// catalog. Queries observe the full latent through the text projection.
pub fn generate_interactions(config: &SyntheticConfig, catalog: &[Listing]) -> Result<Vec<Interaction>> {
    config.validate()?;
    let count = (config.interactions_per_listing_rate * catalog.len() as f64).round() as usize;
    if count == 0 || catalog.is_empty() {
        return Ok(Vec::new());
    }
    let world = World::new(config);
    let mut rng = stream(config.seed, STREAM_INTERACTIONS);
    let pool_size = ((config.listing_coverage * catalog.len() as f64).ceil() as usize).clamp(1, catalog.len());
    let mut pool = index::sample(&mut rng, catalog.len(), pool_size).into_vec();
    pool.sort_unstable();

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let listing = &catalog[pool[rng.random_range(0..pool.len())]];
        if listing.latent.len() != config.latent_dim() {
            return Err(Error::ConfigInvalid(format!("listing {:?} has no latent matching the config", listing.id)));
        }
        let query_features = world.text_projection.observe(&listing.latent, |_| true, config.query_noise, &mut rng);
        out.push(Interaction { query_features, clicked_id: listing.id.clone() });
    }
    Ok(out)
}

pub fn generate_dataset(config: &SyntheticConfig) -> Result<Dataset> {
    let listings = generate_catalog(config)?;
    let interactions = generate_interactions(config, &listings)?;
    Ok(Dataset { listings, interactions })
}

/// Writes `listings.jsonl` and `interactions.jsonl` into `dir`.
pub fn serialize_dataset(listings: &[Listing], interactions: &[Interaction], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(LISTINGS_FILE), listings)?;
    write_jsonl(&dir.join(INTERACTIONS_FILE), interactions)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let listings: Vec<Listing> = read_jsonl(&dir.join(LISTINGS_FILE), |l: &Listing| l.validate())?;
    let mut ids = HashSet::with_capacity(listings.len());
    for (k, l) in listings.iter().enumerate() {
        if !ids.insert(l.id.as_str()) {
            return Err(Error::FormatLine { line: k + 1, message: format!("duplicate listing id {:?}", l.id) });
        }
    }
    let interactions = read_jsonl(&dir.join(INTERACTIONS_FILE), |i: &Interaction| {
        if ids.contains(i.clicked_id.as_str()) {
            Ok(())
        } else {
            Err(format!("clicked id {:?} is not in the catalog", i.clicked_id))
        }
    })?;
    Ok(Dataset { listings, interactions })
}

fn read_jsonl<T, F>(path: &Path, check: F) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    F: Fn(&T) -> std::result::Result<(), String>,
{
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: T = serde_json::from_str(&line).map_err(|e| Error::FormatLine { line: k + 1, message: e.to_string() })?;
        check(&row).map_err(|message| Error::FormatLine { line: k + 1, message })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Shuffled copy of `0..n` drawn from `rng`.
pub(crate) fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}
