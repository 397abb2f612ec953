//! Training-free visual style alignment.
//!
//! Every satellite image yields a per-channel lookup table built from its
//! cumulative color distribution. The tables are averaged over the satellite
//! set and the averaged mapping is applied pixel-wise to drone images, which
//! pulls their color statistics toward the satellite look without touching
//! geometry or texture.
//!
//! Rounding follows one rule everywhere: a real level `v` becomes
//! `floor(v + 0.5)` clamped to `[0, 255]`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::image::RgbImage;
use crate::math;
use crate::{Error, Result};

pub const LEVELS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> char {
        match self {
            Channel::R => 'R',
            Channel::G => 'G',
            Channel::B => 'B',
        }
    }
}

/// Pixel tallies per gray level for one channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelHistogram {
    counts: [u64; LEVELS],
}

impl ChannelHistogram {
    pub fn from_counts(counts: [u64; LEVELS]) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[u64; LEVELS] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another histogram's tallies to this one.
    pub fn merge(&mut self, other: &ChannelHistogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
    }

    /// Normalized cumulative distribution, `cdf[x] = P(value <= x)`.
    pub fn cdf(&self) -> Result<[f64; LEVELS]> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyHistogram);
        }
        let mut out = [0.0; LEVELS];
        let mut running = 0u64;
        for (o, &c) in out.iter_mut().zip(self.counts.iter()) {
            running += c;
            *o = running as f64 / total as f64;
        }
        Ok(out)
    }
}

/// A 256-entry, monotone non-decreasing lookup table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Lut([u8; LEVELS]);

impl Lut {
    pub fn identity() -> Self {
        let mut t = [0u8; LEVELS];
        for (i, v) in t.iter_mut().enumerate() {
            *v = i as u8;
        }
        Lut(t)
    }

    pub fn constant(v: u8) -> Self {
        Lut([v; LEVELS])
    }

    /// Validates monotonicity.
    pub fn new(table: [u8; LEVELS]) -> Result<Self> {
        if let Some(i) = table.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidMapping(format!(
                "lookup table decreases at level {} ({} -> {})",
                i + 1,
                table[i],
                table[i + 1]
            )));
        }
        Ok(Lut(table))
    }

    pub fn table(&self) -> &[u8; LEVELS] {
        &self.0
    }

    #[inline]
    pub fn map(&self, v: u8) -> u8 {
        self.0[v as usize]
    }
}

/// Per-channel lookup tables `[R, G, B]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ColorMapping {
    luts: [Lut; 3],
}

impl ColorMapping {
    pub fn new(r: Lut, g: Lut, b: Lut) -> Self {
        Self { luts: [r, g, b] }
    }

    pub fn identity() -> Self {
        let id = Lut::identity();
        Self::new(id, id, id)
    }

    pub fn lut(&self, channel: Channel) -> &Lut {
        &self.luts[channel.index()]
    }

    pub fn luts(&self) -> &[Lut; 3] {
        &self.luts
    }
}

/// How the satellite set is reduced to one mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SatelliteReduction {
    /// One mapping per satellite image, then the entry-wise average.
    #[default]
    PerImageAverage,
    /// One mapping from the histogram pooled over the whole set.
    Pooled,
}

pub fn channel_histogram(image: &RgbImage, channel: Channel) -> Result<ChannelHistogram> {
    if image.pixel_count() == 0 {
        return Err(Error::EmptyInput);
    }
    let mut counts = [0u64; LEVELS];
    for v in image.channel_values(channel.index()) {
        counts[v as usize] += 1;
    }
    Ok(ChannelHistogram { counts })
}

#[inline]
fn quantize(v: f64) -> u8 {
    math::floor(v + 0.5).clamp(0.0, 255.0) as u8
}

/// Scaled cumulative distribution of one channel, rounded to 8-bit levels.
pub fn mapping_from_histogram(hist: &ChannelHistogram) -> Result<Lut> {
    let cdf = hist.cdf()?;
    let mut table = [0u8; LEVELS];
    for (t, &c) in table.iter_mut().zip(cdf.iter()) {
        *t = quantize((c * 255.0).min(255.0));
    }
    Lut::new(table)
}

pub fn mapping_from_image(image: &RgbImage) -> Result<ColorMapping> {
    let lut = |c| mapping_from_histogram(&channel_histogram(image, c)?);
    Ok(ColorMapping::new(lut(Channel::R)?, lut(Channel::G)?, lut(Channel::B)?))
}

/// Entry-wise mean of the mappings, rounded half up.
///
/// Sums are integers so the result does not depend on input order.
pub fn average_mapping(mappings: &[ColorMapping]) -> Result<ColorMapping> {
    if mappings.is_empty() {
        return Err(Error::NoSatelliteMappings);
    }
    let n = mappings.len() as u64;
    let mut luts = [Lut::constant(0); 3];
    for (c, lut) in luts.iter_mut().enumerate() {
        let mut table = [0u8; LEVELS];
        for (x, t) in table.iter_mut().enumerate() {
            let sum: u64 = mappings.iter().map(|m| m.luts[c].0[x] as u64).sum();
            // floor(sum / n + 1/2) in exact integer arithmetic
            *t = ((2 * sum + n) / (2 * n)).min(255) as u8;
        }
        *lut = Lut::new(table)?;
    }
    Ok(ColorMapping { luts })
}

/// The satellite-set mapping under the chosen reduction.
pub fn satellite_mapping(images: &[RgbImage], reduction: SatelliteReduction) -> Result<ColorMapping> {
    if images.is_empty() {
        return Err(Error::NoSatelliteMappings);
    }
    match reduction {
        SatelliteReduction::PerImageAverage => {
            let maps = images.iter().map(mapping_from_image).collect::<Result<Vec<_>>>()?;
            average_mapping(&maps)
        }
        SatelliteReduction::Pooled => {
            let mut luts = [Lut::constant(0); 3];
            for ch in Channel::ALL {
                let mut pooled = ChannelHistogram::from_counts([0; LEVELS]);
                for img in images {
                    pooled.merge(&channel_histogram(img, ch)?);
                }
                luts[ch.index()] = mapping_from_histogram(&pooled)?;
            }
            Ok(ColorMapping { luts })
        }
    }
}

pub fn apply_mapping(image: &RgbImage, mapping: &ColorMapping) -> RgbImage {
    let [r, g, b] = &mapping.luts;
    let mut out = image.as_bytes().to_vec();
    for px in out.chunks_exact_mut(3) {
        px[0] = r.map(px[0]);
        px[1] = g.map(px[1]);
        px[2] = b.map(px[2]);
    }
    RgbImage::new(image.width(), image.height(), out).expect("dimensions unchanged")
}

/// Pooled per-channel CDF over a set of images.
pub fn aggregate_cdf(images: &[RgbImage], channel: Channel) -> Result<[f64; LEVELS]> {
    if images.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut pooled = ChannelHistogram::from_counts([0; LEVELS]);
    for img in images {
        pooled.merge(&channel_histogram(img, channel)?);
    }
    pooled.cdf()
}

/// Kolmogorov-Smirnov style distance between two CDFs.
pub fn max_cdf_distance(a: &[f64; LEVELS], b: &[f64; LEVELS]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Text form: three lines `R: v0,...,v255`, then `G:` and `B:`.
pub fn format_mapping(mapping: &ColorMapping) -> String {
    let mut s = String::new();
    for ch in Channel::ALL {
        let _ = write!(s, "{}:", ch.label());
        for (i, v) in mapping.lut(ch).table().iter().enumerate() {
            let sep = if i == 0 { " " } else { "," };
            let _ = write!(s, "{}{}", sep, v);
        }
        s.push('\n');
    }
    s
}

pub fn parse_mapping(text: &str) -> Result<ColorMapping> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let err = |line: usize, msg: String| Error::MappingParse { line, msg };
    if lines.len() != 3 {
        let line = lines.get(3).map_or(lines.last().map_or(1, |l| l.0), |l| l.0);
        return Err(err(line, format!("expected 3 channel lines, found {}", lines.len())));
    }
    let mut luts = [Lut::constant(0); 3];
    for (ch, &(line, body)) in Channel::ALL.iter().zip(lines.iter()) {
        let (label, values) = body
            .split_once(':')
            .ok_or_else(|| err(line, String::from("missing channel label")))?;
        if label.trim().len() != 1 || !label.trim().starts_with(ch.label()) {
            return Err(err(
                line,
                format!("expected channel {}, found {:?}", ch.label(), label.trim()),
            ));
        }
        let mut table = [0u8; LEVELS];
        let mut count = 0usize;
        for tok in values.split(',') {
            let v: i64 = tok
                .trim()
                .parse()
                .map_err(|_| err(line, format!("not an integer: {:?}", tok.trim())))?;
            if !(0..=255).contains(&v) {
                return Err(err(line, format!("value {} out of range [0, 255]", v)));
            }
            if count < LEVELS {
                table[count] = v as u8;
            }
            count += 1;
        }
        if count != LEVELS {
            return Err(err(line, format!("expected {} entries, found {}", LEVELS, count)));
        }
        luts[ch.index()] = Lut::new(table).map_err(|e| err(line, format!("{}", e)))?;
    }
    Ok(ColorMapping { luts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
        let px = (0..w * h * 3).map(|_| rng.gen::<u8>()).collect();
        RgbImage::new(w, h, px).unwrap()
    }

    #[test]
    fn histogram_of_constant_image() {
        let img = RgbImage::filled(2, 2, [0, 7, 9]).unwrap();
        let h = channel_histogram(&img, Channel::R).unwrap();
        assert_eq!(h.counts()[0], 4);
        assert_eq!(h.total(), 4);
    }

    #[test]
    fn histogram_one_pixel_per_level() {
        let img = RgbImage::from_fn(256, 1, |x, _| [x as u8, 0, 0]).unwrap();
        let h = channel_histogram(&img, Channel::R).unwrap();
        assert!(h.counts().iter().all(|&c| c == 1));
    }

    #[test]
    fn histogram_matches_per_pixel_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = random_image(&mut rng, 16, 16);
        for ch in Channel::ALL {
            let h = channel_histogram(&img, ch).unwrap();
            let mut tally = [0u64; LEVELS];
            for y in 0..16 {
                for x in 0..16 {
                    tally[img.pixel(x, y)[ch.index()] as usize] += 1;
                }
            }
            assert_eq!(h.counts(), &tally);
            assert_eq!(h.total(), 256);
        }
    }

    #[test]
    fn uniform_histogram_lut() {
        let lut = mapping_from_histogram(&ChannelHistogram::from_counts([3; LEVELS])).unwrap();
        for x in 0..LEVELS {
            let expect = libm::floor((x as f64 + 1.0) / 256.0 * 255.0 + 0.5) as u8;
            assert_eq!(lut.map(x as u8), expect);
        }
        assert_eq!(lut.map(0), 1);
        assert_eq!(lut.map(255), 255);
    }

    #[test]
    fn spike_at_zero_maps_everything_to_white() {
        let mut counts = [0; LEVELS];
        counts[0] = 10;
        let lut = mapping_from_histogram(&ChannelHistogram::from_counts(counts)).unwrap();
        assert_eq!(lut, Lut::constant(255));
    }

    #[test]
    fn half_split_rounds_half_up() {
        let mut counts = [0; LEVELS];
        counts[0] = 5;
        counts[255] = 5;
        let lut = mapping_from_histogram(&ChannelHistogram::from_counts(counts)).unwrap();
        assert!(lut.table()[..255].iter().all(|&v| v == 128));
        assert_eq!(lut.map(255), 255);
    }

    #[test]
    fn empty_histogram_is_an_error() {
        let h = ChannelHistogram::from_counts([0; LEVELS]);
        assert_eq!(mapping_from_histogram(&h), Err(Error::EmptyHistogram));
    }

    #[test]
    fn gray_image_is_a_step_at_its_level() {
        // the cumulative sum is 0 below the spike and 1 from it on
        let img = RgbImage::filled(5, 3, [128, 128, 128]).unwrap();
        let m = mapping_from_image(&img).unwrap();
        for ch in Channel::ALL {
            let t = m.lut(ch).table();
            assert!(t[..128].iter().all(|&v| v == 0));
            assert!(t[128..].iter().all(|&v| v == 255));
        }
        let black = mapping_from_image(&RgbImage::filled(2, 2, [0, 0, 0]).unwrap()).unwrap();
        assert_eq!(*black.lut(Channel::G), Lut::constant(255));
    }

    #[test]
    fn per_channel_uniform_image_gives_near_identity() {
        // every level appears exactly once per channel, channels permuted
        let img = RgbImage::from_fn(256, 1, |x, _| [x as u8, (255 - x) as u8, (x * 7 % 256) as u8]).unwrap();
        let m = mapping_from_image(&img).unwrap();
        for ch in Channel::ALL {
            for x in 0..LEVELS {
                let v = m.lut(ch).map(x as u8) as i32;
                assert!((v - x as i32).abs() <= 1, "{:?} {} -> {}", ch, x, v);
            }
        }
    }

    #[test]
    fn average_of_copies_is_identity_operation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = mapping_from_image(&random_image(&mut rng, 9, 9)).unwrap();
        assert_eq!(average_mapping(&[m, m, m, m]).unwrap(), m);
    }

    #[test]
    fn average_rounds_half_up() {
        let a = ColorMapping::new(Lut::constant(100), Lut::constant(0), Lut::constant(0));
        let b = ColorMapping::new(Lut::constant(101), Lut::constant(0), Lut::constant(1));
        let avg = average_mapping(&[a, b]).unwrap();
        assert_eq!(avg.lut(Channel::R).map(17), 101);
        assert_eq!(avg.lut(Channel::B).map(17), 1);
    }

    #[test]
    fn average_of_nothing_is_an_error() {
        assert_eq!(average_mapping(&[]), Err(Error::NoSatelliteMappings));
        assert_eq!(
            satellite_mapping(&[], SatelliteReduction::Pooled),
            Err(Error::NoSatelliteMappings)
        );
    }

    #[test]
    fn pooled_reduction_of_one_image_equals_per_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(&mut rng, 10, 7);
        let a = satellite_mapping(std::slice::from_ref(&img), SatelliteReduction::Pooled).unwrap();
        let b = satellite_mapping(&[img], SatelliteReduction::PerImageAverage).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn apply_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = random_image(&mut rng, 6, 4);
        assert_eq!(apply_mapping(&img, &ColorMapping::identity()), img);
        let white = Lut::constant(255);
        let out = apply_mapping(&img, &ColorMapping::new(white, white, white));
        assert!(out.as_bytes().iter().all(|&v| v == 255));
    }

    #[test]
    fn apply_matches_per_pixel_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let img = random_image(&mut rng, 13, 11);
        let mut luts = [Lut::identity(); 3];
        for lut in luts.iter_mut() {
            let mut t: Vec<u8> = (0..LEVELS).map(|_| rng.gen()).collect();
            t.sort_unstable();
            *lut = Lut::new(t.try_into().unwrap()).unwrap();
        }
        let m = ColorMapping::new(luts[0], luts[1], luts[2]);
        let out = apply_mapping(&img, &m);
        for y in 0..11 {
            for x in 0..13 {
                let p = img.pixel(x, y);
                let q = out.pixel(x, y);
                for c in 0..3 {
                    assert_eq!(q[c], luts[c].table()[p[c] as usize]);
                }
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = mapping_from_image(&random_image(&mut rng, 8, 8)).unwrap();
        let text = format_mapping(&m);
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("R: "));
        assert_eq!(parse_mapping(&text).unwrap(), m);
    }

    #[test]
    fn parse_rejects_short_channel() {
        let mut text = format_mapping(&ColorMapping::identity());
        text = text.replacen(",255\nG", "\nG", 1);
        match parse_mapping(&text) {
            Err(Error::MappingParse { line, msg }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("255"), "{}", msg);
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn parse_rejects_out_of_range_entry() {
        let text = format_mapping(&ColorMapping::identity()).replacen(",255\nB", ",256\nB", 1);
        match parse_mapping(&text) {
            Err(Error::MappingParse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("256"));
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn parse_rejects_decreasing_table() {
        let text = format_mapping(&ColorMapping::identity()).replacen("B: 0,1,2", "B: 0,2,1", 1);
        assert!(matches!(parse_mapping(&text), Err(Error::MappingParse { line: 3, .. })));
    }

    #[test]
    fn parse_rejects_missing_line() {
        let text = format_mapping(&ColorMapping::identity());
        let two: String = text.lines().take(2).map(|l| format!("{}\n", l)).collect();
        assert!(matches!(parse_mapping(&two), Err(Error::MappingParse { .. })));
    }

    #[test]
    fn cdf_distance_is_zero_for_identical_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let imgs = vec![random_image(&mut rng, 4, 4), random_image(&mut rng, 5, 3)];
        let a = aggregate_cdf(&imgs, Channel::G).unwrap();
        assert_eq!(max_cdf_distance(&a, &a), 0.0);
        assert!((a[255] - 1.0).abs() < 1e-15);
    }
}
