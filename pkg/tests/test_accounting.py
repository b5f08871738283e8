"""
Tests for damage accounting.
"""

import logging
import math
import pytest
import numpy as np
import pandas as pd

from telecoupling.accounting import (
    CoefficientTable, EmptyCoefficients, InvalidAccountingInput, MissingExposure, VslParams, ZeroExports,
    build_ledger, damage_ratio, death_cells, excess_deaths, hectares_to_sd, implied_export_total, monetize,
    standardize_loss, trade_deforestation, vsl_value,
)
from telecoupling.econometrics import MissingBin, ZeroVariance
from telecoupling.models import City, CityRegistry, MissingPopulation


COEFS = CoefficientTable({"calm": 0.0, "1st": 0.37, "2nd": 0.2, "5th": -0.1, "10th": 0.0})


def binned(rows):
    return pd.DataFrame(rows, columns=["sender_id", "receiver_id", "period", "bin"])


def population(rows):
    return pd.DataFrame(rows, columns=["receiver_id", "year", "population"])


class TestCoefficientTable:
    """Test cases for CoefficientTable."""

    def test_lookup(self):
        assert COEFS["1st"] == 0.37
        assert "calm" in COEFS
        with pytest.raises(MissingBin):
            COEFS["3rd"]

    def test_empty(self):
        with pytest.raises(EmptyCoefficients):
            CoefficientTable({})

    def test_calm_required(self):
        with pytest.raises(EmptyCoefficients):
            CoefficientTable({"1st": 0.37})

    def test_non_finite(self):
        with pytest.raises(EmptyCoefficients):
            CoefficientTable({"calm": 0.0, "1st": float("nan")})

    def test_from_frame(self):
        table = CoefficientTable.from_frame(pd.DataFrame({"bin": ["calm", "1st"], "coef": [0.0, 0.37]}))
        assert table.coefficients == {"calm": 0.0, "1st": 0.37}

    def test_from_empty_frame(self):
        with pytest.raises(EmptyCoefficients):
            CoefficientTable.from_frame(pd.DataFrame(columns=["bin", "coef"]))


class TestStandardizeLoss:
    """Test cases for standardize_loss."""

    def test_pooled(self):
        forest = pd.DataFrame({"region_id": ["A", "A", "A"], "year": [2000, 2001, 2002], "forest": [90.0, 100.0, 110.0]})
        z = standardize_loss(forest)
        assert z["z_loss"].tolist() == pytest.approx([1.224744871, 0.0, -1.224744871])
        assert z["sender_id"].tolist() == ["A", "A", "A"]
        assert z["sd"].iloc[0] == pytest.approx(math.sqrt(200.0 / 3.0))

    def test_per_sender_on_one_sender_equals_pooled(self):
        forest = pd.DataFrame({"sender_id": ["A"] * 4, "year": [1, 2, 3, 4], "forest": [5.0, 7.0, 4.0, 9.0]})
        pooled = standardize_loss(forest)
        per_sender = standardize_loss(forest, scope="per-sender")
        assert per_sender["z_loss"].tolist() == pytest.approx(pooled["z_loss"].tolist())

    def test_per_sender_uses_own_moments(self):
        forest = pd.DataFrame({"sender_id": ["A", "A", "B", "B"], "year": [1, 2, 1, 2],
                               "forest": [1.0, 3.0, 100.0, 300.0]})
        z = standardize_loss(forest, scope="per-sender")
        assert z["z_loss"].tolist() == pytest.approx([1.0, -1.0, 1.0, -1.0])

    def test_constant_series(self):
        forest = pd.DataFrame({"region_id": ["A", "A"], "year": [1, 2], "forest": [5.0, 5.0]})
        with pytest.raises(ZeroVariance):
            standardize_loss(forest)

    def test_constant_sender(self):
        forest = pd.DataFrame({"sender_id": ["A", "A", "B", "B"], "year": [1, 2, 1, 2], "forest": [1.0, 3.0, 5.0, 5.0]})
        with pytest.raises(ZeroVariance) as excinfo:
            standardize_loss(forest, scope="per-sender")
        assert "'B'" in str(excinfo.value)

    def test_invalid_scope(self):
        with pytest.raises(InvalidAccountingInput):
            standardize_loss(pd.DataFrame({"region_id": [], "year": [], "forest": []}), scope="national")


class TestDeforestation:
    """Test cases for trade_deforestation and hectares_to_sd."""

    def test_hand_example(self):
        assert trade_deforestation(1.0, -0.174, 100_000.0) == pytest.approx(174.0)

    def test_no_shock(self):
        assert trade_deforestation(0.0, -0.174, 100_000.0) == 0.0

    def test_positive_coefficient(self, caplog):
        with caplog.at_level(logging.WARNING, logger="telecoupling.accounting"):
            assert trade_deforestation(1.0, 0.2, 100_000.0) == 0.0
        assert "forest gain" in caplog.text

    def test_land_must_be_positive(self):
        with pytest.raises(InvalidAccountingInput):
            trade_deforestation(1.0, -0.174, 0.0)

    def test_hectares_to_sd(self):
        assert hectares_to_sd(174.0, 87.0) == 2.0
        with pytest.raises(ZeroVariance):
            hectares_to_sd(1.0, 0.0)


class TestExcessDeaths:
    """Test cases for death_cells and excess_deaths."""

    Z = pd.DataFrame({"sender_id": ["A"], "year": [2001], "z_loss": [1.0]})

    def test_hand_example(self):
        cells = binned([("A", "B", "2001-03", "1st")])
        deaths = excess_deaths("A", self.Z, cells, COEFS, population([("B", 2001, 200_000.0)]))
        assert deaths == pytest.approx(0.74)

    def test_calm_months_contribute_nothing(self):
        cells = binned([("A", "B", f"2001-{m:02d}", "calm") for m in range(1, 13)])
        coefs = CoefficientTable({"calm": 0.0, "1st": 99.0})
        assert excess_deaths("A", self.Z, cells, coefs, population([("B", 2001, 1e6)])) == 0.0

    def test_additive_over_receivers(self):
        pop = population([("B", 2001, 200_000.0), ("C", 2001, 200_000.0)])
        one = excess_deaths("A", self.Z, binned([("A", "B", "2001-03", "2nd")]), COEFS, pop)
        two = excess_deaths("A", self.Z, binned([("A", "B", "2001-03", "2nd"), ("A", "C", "2001-03", "2nd")]), COEFS, pop)
        assert two == pytest.approx(2.0 * one)

    def test_other_sender_is_ignored(self):
        cells = binned([("X", "B", "2001-03", "1st")])
        assert excess_deaths("A", self.Z, cells, COEFS, population([("B", 2001, 1.0)])) == 0.0

    def test_registry_population(self):
        registry = CityRegistry((City("A", -50.0, -10.0), City("B", -49.0, -10.0, {2001: 200_000.0})))
        cells = binned([("A", "B", "2001-03", "1st")])
        assert excess_deaths("A", self.Z, cells, COEFS, registry) == pytest.approx(0.74)

    def test_yearless_exposure_applies_to_every_year(self):
        z = pd.DataFrame({"sender_id": ["A"], "z_loss": [2.0]})
        cells = binned([("A", "B", "2001-03", "1st"), ("A", "B", "2002-03", "1st")])
        pop = population([("B", 2001, 100_000.0), ("B", 2002, 100_000.0)])
        frame = death_cells(cells, z, COEFS, pop)
        assert frame["deaths"].tolist() == pytest.approx([0.74, 0.74])
        assert frame["year"].tolist() == [2001, 2002]

    def test_unknown_bin(self):
        with pytest.raises(MissingBin):
            excess_deaths("A", self.Z, binned([("A", "B", "2001-03", "3rd")]), COEFS, population([("B", 2001, 1.0)]))

    def test_missing_bin(self):
        with pytest.raises(MissingBin):
            excess_deaths("A", self.Z, binned([("A", "B", "2001-03", None)]), COEFS, population([("B", 2001, 1.0)]))

    def test_missing_population(self):
        with pytest.raises(MissingPopulation):
            excess_deaths("A", self.Z, binned([("A", "B", "2001-03", "1st")]), COEFS, population([("B", 2002, 1.0)]))

    def test_missing_exposure(self):
        with pytest.raises(MissingExposure):
            excess_deaths("A", self.Z, binned([("A", "B", "2003-03", "1st")]), COEFS, population([("B", 2003, 1.0)]))


class TestMoney:
    """Test cases for VSL, monetization and ratios."""

    def test_override(self):
        assert vsl_value(VslParams()) == 0.7e6

    def test_zero_elasticity(self):
        assert vsl_value(VslParams(transfer_elasticity=0.0, override_vsl=None)) == 2.3e6

    def test_formula_is_flagged(self, caplog):
        with caplog.at_level(logging.WARNING, logger="telecoupling.accounting"):
            value = vsl_value(VslParams(override_vsl=None))
        assert value == pytest.approx(2.3e6 * 7.0 ** -1.2)
        assert value == pytest.approx(0.223e6, rel=0.01)
        assert "differs" in caplog.text

    def test_invalid_params(self):
        with pytest.raises(InvalidAccountingInput):
            VslParams(base_vsl=0.0)
        with pytest.raises(InvalidAccountingInput):
            VslParams(override_vsl=-1.0)

    def test_monetize(self):
        assert monetize(732_000, 0.7e6) == pytest.approx(512.4e9)
        assert monetize(0.0, 0.7e6) == 0.0
        with pytest.raises(InvalidAccountingInput):
            monetize(1.0, -1.0)

    def test_headline_loss(self):
        loss = monetize(732_000, vsl_value(VslParams()))
        assert loss == pytest.approx(513e9, rel=0.005)

    def test_ratio(self):
        assert damage_ratio(18.0, 100.0) == 0.18
        with pytest.raises(ZeroExports):
            damage_ratio(1.0, 0.0)

    def test_implied_export_total(self):
        assert implied_export_total(512.4e9, 0.18) == pytest.approx(2846.67e9, rel=1e-5)
        with pytest.raises(InvalidAccountingInput):
            implied_export_total(1.0, 0.0)


class TestLedger:
    """Test cases for build_ledger."""

    BINNED = binned([
        ("A", "C", "2001-01", "1st"),
        ("A", "D", "2001-01", "calm"),
        ("A", "C", "2001-02", "5th"),
        ("B", "C", "2001-01", "2nd"),
        ("E", "C", "2001-01", "1st"),
    ])
    LAND = pd.DataFrame({"region_id": ["A", "B"], "land": [100_000.0, 50_000.0]})
    SD = pd.DataFrame({"sender_id": ["A", "B"], "sd": [174.0, 87.0]})
    POP = population([("C", 2001, 200_000.0), ("D", 2001, 100_000.0)])

    def ledger(self, shocks=(1.0, 2.0), vsl=VslParams(), export_total=1e7):
        shock = pd.DataFrame({"sender_id": ["A", "B"], "delta_trade": list(shocks)})
        return build_ledger(self.BINNED, shock, -0.174, self.LAND, self.SD, COEFS, self.POP, vsl, export_total)

    def test_sender_accounts(self):
        senders = self.ledger().senders.set_index("sender_id")
        assert list(senders.index) == ["A", "B"]
        assert senders.loc["A", "deforestation_ha"] == pytest.approx(174.0)
        assert senders.loc["B", "z_loss"] == pytest.approx(2.0)
        assert senders.loc["A", "excess_deaths"] == pytest.approx(0.54)
        assert senders.loc["A", "gross_positive_deaths"] == pytest.approx(0.74)
        assert senders.loc["B", "excess_deaths"] == pytest.approx(0.8)
        assert senders.loc["A", "monetized_loss"] == pytest.approx(0.54 * 0.7e6)

    def test_receiver_accounts(self):
        receivers = self.ledger().receivers.set_index("receiver_id")
        assert receivers.loc["C", "received_deaths"] == pytest.approx(1.34)
        assert receivers.loc["D", "received_deaths"] == 0.0

    def test_totals(self):
        totals = self.ledger().totals
        assert totals["excess_deaths"] == pytest.approx(1.34)
        assert totals["deforestation_ha"] == pytest.approx(348.0)
        assert totals["monetized_loss"] == pytest.approx(1.34 * 0.7e6)
        assert totals["damage_ratio"] == pytest.approx(1.34 * 0.7e6 / 1e7)
        assert totals["vsl_source"] == "override"

    def test_conservation(self):
        ledger = self.ledger()
        assert ledger.is_conserved()
        assert math.fsum(ledger.senders["excess_deaths"]) == pytest.approx(ledger.totals["excess_deaths"])

    def test_conservation_on_random_ledger(self):
        rng = np.random.default_rng(17)
        senders = [f"S{i:02d}" for i in range(50)]
        receivers = [f"R{j:02d}" for j in range(50)]
        months = [f"{y}-{m:02d}" for y in (2001, 2002) for m in range(1, 13)]
        labels = list(COEFS.coefficients)
        cells = pd.DataFrame(
            [(s, r, p) for s in senders for r in receivers for p in months],
            columns=["sender_id", "receiver_id", "period"],
        )
        cells["bin"] = rng.choice(labels, size=len(cells))
        shock = pd.DataFrame({"sender_id": senders, "delta_trade": rng.uniform(0.0, 2.0, size=50)})
        land = pd.DataFrame({"region_id": senders, "land": rng.uniform(1e4, 1e6, size=50)})
        sd = pd.DataFrame({"sender_id": senders, "sd": rng.uniform(50.0, 500.0, size=50)})
        pop = population([(r, y, rng.uniform(1e4, 1e6)) for r in receivers for y in (2001, 2002)])

        ledger = build_ledger(cells, shock, -0.174, land, sd, COEFS, pop, VslParams())
        sent = math.fsum(ledger.senders["excess_deaths"])
        received = math.fsum(ledger.receivers["received_deaths"])
        assert sent != 0.0
        assert sent == pytest.approx(received, rel=1e-9, abs=1e-9)
        assert ledger.is_conserved()

    def test_linear_in_shock_and_vsl(self):
        base = self.ledger().totals
        doubled = self.ledger(shocks=(2.0, 4.0), vsl=VslParams(override_vsl=1.4e6)).totals
        assert doubled["excess_deaths"] == pytest.approx(2.0 * base["excess_deaths"])
        assert doubled["monetized_loss"] == pytest.approx(4.0 * base["monetized_loss"])

    def test_without_export_total(self):
        totals = self.ledger(export_total=None).totals
        assert totals["damage_ratio"] is None

    def test_duplicate_shock(self):
        shock = pd.DataFrame({"sender_id": ["A", "A"], "delta_trade": [1.0, 2.0]})
        with pytest.raises(InvalidAccountingInput):
            build_ledger(self.BINNED, shock, -0.174, self.LAND, self.SD, COEFS, self.POP, VslParams())

    def test_missing_land(self):
        shock = pd.DataFrame({"sender_id": ["Z"], "delta_trade": [1.0]})
        with pytest.raises(MissingExposure):
            build_ledger(self.BINNED, shock, -0.174, self.LAND, self.SD, COEFS, self.POP, VslParams())

    def test_to_dict(self):
        payload = self.ledger().to_dict()
        assert payload["n_senders"] == 2
        assert payload["n_receivers"] == 2
