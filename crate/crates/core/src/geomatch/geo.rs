//! Spherical-earth distance and conservative degree-space bounds.

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Beyond this latitude a search rectangle spans every longitude.
pub const POLAR_CLAMP_DEG: f64 = 85.0;

/// Slack added to every bound, in degrees (about a millimetre), so that
/// rounding in the bound never excludes a point the distance test accepts.
const BOUND_SLACK_DEG: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl LatLon {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Self {
        Self { lat_deg, lon_deg }
    }

    /// Latitude in [-90, 90], longitude in [-180, 180).
    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat_deg) && (-180.0..180.0).contains(&self.lon_deg)
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let phi1 = a.lat_deg.to_radians();
    let phi2 = b.lat_deg.to_radians();
    let dphi = (b.lat_deg - a.lat_deg).to_radians();
    let dlambda = (b.lon_deg - a.lon_deg).to_radians();
    let s = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * s.clamp(0.0, 1.0).sqrt().asin()
}

/// Axis-aligned rectangle in (lon, lat) degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegreeRect {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl DegreeRect {
    pub fn contains(&self, p: LatLon) -> bool {
        (self.min_lon..=self.max_lon).contains(&p.lon_deg) && (self.min_lat..=self.max_lat).contains(&p.lat_deg)
    }
}

/// Rectangles covering every point within `distance_m` of `center`.
///
/// The latitude span of a spherical cap of angular radius θ is exactly
/// φ ± θ; its longitude half-width is asin(sin θ / cos φ). Both are scaled by
/// `inflation` (1.0 is already exact) and padded by a small slack. Caps that
/// reach past [`POLAR_CLAMP_DEG`] span all longitudes; caps that cross the
/// antimeridian come back as two rectangles.
pub fn cap_bounds(center: LatLon, distance_m: f64, inflation: f64) -> Vec<DegreeRect> {
    let theta = (distance_m.max(0.0) / EARTH_RADIUS_M) * inflation;
    let theta_deg = theta.to_degrees() + BOUND_SLACK_DEG;
    let min_lat = (center.lat_deg - theta_deg).max(-90.0);
    let max_lat = (center.lat_deg + theta_deg).min(90.0);

    if max_lat >= POLAR_CLAMP_DEG || min_lat <= -POLAR_CLAMP_DEG || theta >= std::f64::consts::FRAC_PI_2 {
        return vec![DegreeRect {
            min_lon: -180.0,
            min_lat,
            max_lon: 180.0,
            max_lat,
        }];
    }

    let ratio = (theta.sin() / center.lat_deg.to_radians().cos()).min(1.0);
    let half_width = ratio.asin().to_degrees() + BOUND_SLACK_DEG;
    if half_width >= 180.0 {
        return vec![DegreeRect {
            min_lon: -180.0,
            min_lat,
            max_lon: 180.0,
            max_lat,
        }];
    }
    let lo = center.lon_deg - half_width;
    let hi = center.lon_deg + half_width;
    let rect = |min_lon: f64, max_lon: f64| DegreeRect {
        min_lon,
        min_lat,
        max_lon,
        max_lat,
    };
    if lo < -180.0 {
        vec![rect(-180.0, hi), rect(lo + 360.0, 180.0)]
    } else if hi >= 180.0 {
        vec![rect(lo, 180.0), rect(-180.0, hi - 360.0)]
    } else {
        vec![rect(lo, hi)]
    }
}
