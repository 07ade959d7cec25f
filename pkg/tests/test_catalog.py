"""Catalog loading, history parsing, title resolution, rating derivation."""

from datetime import date, timedelta

import pytest
from hypothesis import given, strategies as st

from fedrec.catalog import (
    CatalogError,
    CatalogItem,
    HistoryError,
    Kind,
    RatingVector,
    ViewingEvent,
    derive_ratings,
    load_catalog,
    max_events_in_window,
    parse_history,
    resolve_title,
    split_series_title,
)

CATALOG_CSV = b"""item_id,title,genres,kind,image_url
2,Zeta Quest,Drama|Comedy,series,http://img/2.jpg
0,Alpha House,Drama,series,
1,Beta Film,Action,movie,http://img/1.jpg
"""


def make_catalog():
    return load_catalog(CATALOG_CSV, "csv")


class TestLoadCatalog:
    def test_empty_stream_with_header(self):
        assert load_catalog(b"item_id,title,genres,kind,image_url\n", "csv") == []

    def test_orders_by_item_id(self):
        items = make_catalog()
        assert [it.item_id for it in items] == [0, 1, 2]

    def test_duplicate_id_is_hard_error(self):
        bad = CATALOG_CSV + b'7,A,Drama,series,\n7,B,Drama,series,\n'
        with pytest.raises(CatalogError, match="duplicate item_id 7"):
            load_catalog(bad, "csv")

    def test_unknown_kind_is_hard_error(self):
        bad = b"item_id,title,genres,kind,image_url\n0,A,Drama,hologram,\n"
        with pytest.raises(CatalogError, match="unknown kind"):
            load_catalog(bad, "csv")

    def test_genres_trimmed_and_split(self):
        items = make_catalog()
        assert items[2].genres == ("Drama", "Comedy")

    def test_empty_genres_fall_back_to_unknown(self):
        data = b"item_id,title,genres,kind,image_url\n0,A,,series,\n"
        assert load_catalog(data, "csv")[0].genres == ("Unknown",)

    def test_json_round_trip_matches_csv(self):
        json_data = (
            b'[{"item_id": 2, "title": "Zeta Quest", "genres": ["Drama", "Comedy"],'
            b' "kind": "series", "image_url": "http://img/2.jpg"},'
            b' {"item_id": 0, "title": "Alpha House", "genres": "Drama", "kind": "series"},'
            b' {"item_id": 1, "title": "Beta Film", "genres": ["Action"], "kind": "movie",'
            b' "image_url": "http://img/1.jpg"}]'
        )
        assert load_catalog(json_data, "json") == make_catalog()

    def test_missing_column_is_error(self):
        with pytest.raises(CatalogError, match="missing columns"):
            load_catalog(b"item_id,title\n0,A\n", "csv")


class TestParseHistory:
    def test_header_only(self):
        events, failures = parse_history(b"Title,Date\n")
        assert events == [] and failures == 0

    def test_row_preserved_verbatim(self):
        raw = b'Title,Date\n"Show A: Season 1: Pilot","01/02/2024"\n'
        events, failures = parse_history(raw)
        assert failures == 0
        assert events == [ViewingEvent("Show A: Season 1: Pilot", date(2024, 1, 2))]

    def test_fallback_date_format(self):
        events, failures = parse_history(b"Title,Date\nX,25-12-2024\n")
        assert failures == 0
        assert events[0].watch_date == date(2024, 12, 25)

    def test_unparseable_date_counts_as_failure(self):
        events, failures = parse_history(b"Title,Date\nX,not-a-date\n")
        assert events == [] and failures == 1

    def test_wrong_column_count_counts_as_failure(self):
        events, failures = parse_history(b"Title,Date\na,b,c\nX,01/02/2024\n")
        assert len(events) == 1 and failures == 1

    def test_unreadable_stream_is_hard_error(self):
        with pytest.raises(HistoryError):
            parse_history(b"\xff\xfe\x00ugh\x80\x81")


class TestResolveTitle:
    def test_episode_suffix_resolves_series(self):
        catalog = [CatalogItem(3, "X", ("Drama",), Kind.SERIES)]
        assert resolve_title("X: Season 2: Finale", catalog) == (3, True)

    def test_exact_movie_match_is_not_episode(self):
        catalog = [CatalogItem(5, "Standalone Film", ("Action",), Kind.MOVIE)]
        assert resolve_title("Standalone Film", catalog) == (5, False)

    def test_unknown_title_resolves_to_none(self):
        assert resolve_title("Nonexistent", make_catalog()) is None

    def test_match_is_case_insensitive(self):
        catalog = [CatalogItem(1, "Alpha House", ("Drama",), Kind.SERIES)]
        assert resolve_title("ALPHA HOUSE: Season 1: Episode 2", catalog) == (1, True)

    def test_colon_without_episode_marker_is_not_split(self):
        assert split_series_title("Love: Actually") == ("Love: Actually", False)
        assert split_series_title("X: Episode 9") == ("X", True)


def events_for(title, days):
    return [ViewingEvent(title, date(2024, 1, 1) + timedelta(days=d)) for d in days]


class TestDeriveRatings:
    def setup_method(self):
        self.catalog = [
            CatalogItem(0, "S", ("Drama",), Kind.SERIES),
            CatalogItem(1, "M", ("Action",), Kind.MOVIE),
            CatalogItem(2, "T", ("Comedy",), Kind.SERIES),
        ]

    def test_three_episodes_in_a_week_rates_five(self):
        events = events_for("S: Season 1: Episode 1", [1, 3, 6])
        assert derive_ratings(events, self.catalog).ratings == {0: 5}

    def test_movie_rates_one(self):
        events = events_for("M", [4])
        assert derive_ratings(events, self.catalog).ratings == {1: 1}

    def test_spread_episodes_rate_three(self):
        events = events_for("S: Season 1: Episode 1", [1, 10, 20])
        assert derive_ratings(events, self.catalog).ratings == {0: 3}

    def test_two_episode_week_rates_four(self):
        events = events_for("S: Season 1: Episode 1", [1, 5])
        assert derive_ratings(events, self.catalog).ratings == {0: 4}

    def test_single_episode_rates_two(self):
        events = events_for("S: Season 1: Episode 1", [1])
        assert derive_ratings(events, self.catalog).ratings == {0: 2}

    def test_unwatched_items_absent(self):
        assert derive_ratings([], self.catalog).ratings == {}

    def test_window_boundary_is_seven_calendar_days_inclusive(self):
        # days 0 and 6 share a week; days 0 and 7 do not
        assert derive_ratings(events_for("S", [0, 6]), self.catalog).ratings == {0: 4}
        assert derive_ratings(events_for("S", [0, 7]), self.catalog).ratings == {0: 3}

    @given(st.lists(st.integers(min_value=0, max_value=60), min_size=1, max_size=40))
    def test_rating_monotone_in_added_episodes(self, days):
        base = derive_ratings(events_for("S", days), self.catalog).ratings[0]
        for extra in (0, 15, 61):
            grown = derive_ratings(events_for("S", days + [extra]), self.catalog).ratings[0]
            assert grown >= base


class TestWindowCounting:
    @given(st.lists(st.integers(min_value=0, max_value=120), min_size=1, max_size=100))
    def test_incremental_matches_brute_force(self, days):
        dates = [date(2024, 1, 1) + timedelta(days=d) for d in days]
        # brute force: anchor a 7-day window at every event date
        brute = max(
            sum(1 for other in dates if 0 <= (other - start).days <= 6) for start in dates
        )
        assert max_events_in_window(dates) == brute


class TestPrivacyByConstruction:
    def test_rating_vector_has_no_wire_encoding(self):
        from fedrec.protocol import encode_wire

        vector = RatingVector(owner="p", ratings={0: 5})
        with pytest.raises(TypeError, match="no wire encoding"):
            encode_wire(vector)

    def test_viewing_event_has_no_wire_encoding(self):
        from fedrec.protocol import encode_wire

        with pytest.raises(TypeError, match="no wire encoding"):
            encode_wire(ViewingEvent("S", date(2024, 1, 1)))

    def test_rating_values_validated(self):
        with pytest.raises(ValueError):
            RatingVector(owner="p", ratings={0: 6})
        with pytest.raises(ValueError):
            RatingVector(owner="p", ratings={0: 0})
