import numpy as np
import pytest

from odflow import ODMatrix

# 5-station demo network used across the suite: strong structure, zero
# diagonal, symmetric, margins (186, 218, 142, 214, 168)
DEMO_TRUTH = np.array(
    [
        [0, 70, 11, 54, 51],
        [70, 0, 23, 43, 82],
        [11, 23, 0, 95, 13],
        [54, 43, 95, 0, 22],
        [51, 82, 13, 22, 0],
    ],
    dtype=float,
)

# one observed survey subsample of DEMO_TRUTH at fraction ~1/6
DEMO_SURVEY_REALIZATION = np.array(
    [
        [0, 11, 3, 10, 7],
        [7, 0, 5, 8, 14],
        [4, 2, 0, 14, 3],
        [5, 8, 18, 0, 2],
        [3, 11, 8, 8, 0],
    ],
    dtype=float,
)


def pytest_addoption(parser):
    parser.addoption(
        "--full",
        action="store_true",
        default=False,
        help="run the acceptance experiments at full replication counts",
    )


@pytest.fixture(scope="session")
def full_runs(request):
    return request.config.getoption("--full")


@pytest.fixture(scope="session")
def demo_truth():
    return ODMatrix(DEMO_TRUTH)


def random_symmetric_od(n, rng, scale=50.0):
    """Random symmetric zero-diagonal nonnegative matrix."""
    a = rng.uniform(0.0, scale, size=(n, n))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 0.0)
    return a


def make_fixture_network(tmp_path, rng=None, days=35):
    """Six-wharf synthetic dataset in the documented CSV schemas.

    Returns (stations_path, journeys_path, barriers_path, truth).
    """
    rng = rng or np.random.default_rng(20210)
    wharfs = [
        ("W1", "Northport", -33.851, 151.211),
        ("W2", "Eastquay", -33.863, 151.238),
        ("W3", "Gullpoint", -33.845, 151.262),
        ("W4", "Sandwharf", -33.875, 151.275),
        ("W5", "Baywalk", -33.881, 151.247),
        ("W6", "Reefside", -33.858, 151.288),
    ]
    stations = tmp_path / "stations.csv"
    with stations.open("w") as fh:
        fh.write("id,name,lat,lon,has_barrier\n")
        for sid, name, lat, lon in wharfs:
            fh.write(f"{sid},{name},{lat},{lon},true\n")

    truth = random_symmetric_od(6, rng, scale=60.0).round()
    journeys = tmp_path / "journeys.csv"
    with journeys.open("w") as fh:
        fh.write("id,origin_lat,origin_lon,destination_lat,destination_lon,date,ticket_class\n")
        rec = 0
        for i, (_, _, lat_i, lon_i) in enumerate(wharfs):
            for j, (_, _, lat_j, lon_j) in enumerate(wharfs):
                if i == j:
                    continue
                k = rng.poisson(max(truth[i, j], 1.0) / 6)
                for _ in range(int(k)):
                    rec += 1
                    fh.write(
                        f"p{rec},{lat_i + rng.normal(0, 0.002):.6f},"
                        f"{lon_i + rng.normal(0, 0.002):.6f},"
                        f"{lat_j + rng.normal(0, 0.002):.6f},"
                        f"{lon_j + rng.normal(0, 0.002):.6f},"
                        f"2010-03-0{1 + rec % 9},regular_zone\n"
                    )

    barriers = tmp_path / "barriers.csv"
    from datetime import date, timedelta

    day0 = date(2010, 3, 1)
    with barriers.open("w") as fh:
        fh.write("date,station_id,departures,arrivals\n")
        for t in range(days):
            draw = rng.poisson(truth)
            np.fill_diagonal(draw, 0)
            dep = draw.sum(axis=1)
            arr = draw.sum(axis=0)
            d = (day0 + timedelta(days=t)).isoformat()
            for i, (sid, *_rest) in enumerate(wharfs):
                fh.write(f"{d},{sid},{dep[i]},{arr[i]}\n")
    return stations, journeys, barriers, truth
