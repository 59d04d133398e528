from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the mockllm helper

from minerlink.records import GeoPoint, Record

DATA_DIR = Path(__file__).parent / "data"


def make_record(uri: str, attributes, location=None, source_id: str | None = None) -> Record:
    """Terse Record builder for tests."""
    return Record(
        uri=uri,
        source_id=source_id if source_id is not None else uri.split(":")[0],
        attributes=tuple(attributes),
        location=GeoPoint(*location) if location is not None else None,
    )


@pytest.fixture
def yellow_pine_mrds() -> Record:
    return make_record(
        "mrds:10310734",
        [
            ("site_name", "Yellow Pine"),
            ("latitude", "44.965"),
            ("longitude", "-115.318"),
            ("commod1", "Tungsten"),
            ("state", "ID"),
        ],
        location=(44.965, -115.318),
    )


@pytest.fixture
def yellow_pine_usmin() -> Record:
    return make_record(
        "usmin:US001",
        [
            ("Ftr_Name", "Yellow Pine Deposit"),
            ("Approx_Lat", "44.962"),
            ("Approx_Lon", "-115.312"),
            ("Commodity", "Tungsten"),
        ],
        location=(44.962, -115.312),
    )


@pytest.fixture
def mrds_csv(tmp_path: Path) -> Path:
    path = tmp_path / "mrds_sample.csv"
    path.write_text(
        "dep_id,site_name,latitude,longitude,commod1,commod2,state\n"
        "10310734,Yellow Pine,44.965,-115.318,Tungsten,,ID\n"
        "10310735,Tungsten Jim,44.713,-115.091,Tungsten,Antimony,ID\n"
        "10310736,Eagle Mine,46.744,-87.887,Nickel,Copper,MI\n",
        encoding="utf-8",
    )
    return path
