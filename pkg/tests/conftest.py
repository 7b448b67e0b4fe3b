from datetime import datetime, timedelta, timezone

import pytest

from broadrel.model import Technology, UnitMeta

T0 = datetime(2015, 1, 1, tzinfo=timezone.utc)


def hourly(losses, start=T0, skip=()):
    """Series of (hour, loss) with the given hour offsets left out."""
    return [(start + timedelta(hours=i), x) for i, x in enumerate(losses) if i not in skip]


def unit(uid, isp="A", tech=Technology.CABLE, down=50, up=10, **kw):
    return UnitMeta(uid, isp, tech, down * 1e6, up * 1e6, **kw)


@pytest.fixture
def nine_hour():
    return hourly([0, 0, 0.02, 0, 0, 0, 0.06, 0.06, 0])
