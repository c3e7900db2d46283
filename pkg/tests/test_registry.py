import unittest

from registry import Entry, SpecError, call_spec, entries_to_dict, entries_to_string, entry, parse_scalar, parse_spec


@entry
def scaled(size, factor=1.0, label="plain"):
    """
    Multiply a size.

    More text that does not show up in listings.
    """
    return size, factor, label


@entry(name="renamed")
def original(x=0):
    return x


class TestParsing(unittest.TestCase):

    def test_scalars(self):
        self.assertEqual(parse_scalar("3"), 3)
        self.assertEqual(parse_scalar("-3"), -3)
        self.assertEqual(parse_scalar("2.5"), 2.5)
        self.assertEqual(parse_scalar("1e-2"), 1e-2)
        self.assertEqual(parse_scalar(".5"), 0.5)
        self.assertEqual(parse_scalar("64x32"), (64, 32))
        self.assertIs(parse_scalar("True"), True)
        self.assertEqual(parse_scalar(" periodic "), "periodic")

    def test_spec(self):
        self.assertEqual(parse_spec("gaussian_blur"), ("gaussian_blur", {}))
        self.assertEqual(parse_spec("gaussian_blur:sigma=2.0,size=16x16,boundary=periodic"),
                         ("gaussian_blur", {"sigma": 2.0, "size": (16, 16), "boundary": "periodic"}))
        self.assertEqual(parse_spec(" dense_1d: size = 32 "), ("dense_1d", {"size": 32}))

    def test_malformed_specs(self):
        for spec in ("", ":sigma=1", "gaussian:sigma", "gaussian:sigma=", "gaussian:1x=2", "gaussian:a=1,a=2"):
            with self.assertRaises(SpecError, msg=spec):
                parse_spec(spec)

    def test_spec_error_is_value_error(self):
        self.assertTrue(issubclass(SpecError, ValueError))


class TestEntries(unittest.TestCase):

    def setUp(self):
        self.entries = entries_to_dict([scaled, original])

    def test_names(self):
        self.assertIsInstance(scaled, Entry)
        self.assertEqual(sorted(self.entries), ["renamed", "scaled"])

    def test_call_spec(self):
        self.assertEqual(call_spec("scaled:factor=2", self.entries, 4), (4, 2, "plain"))
        self.assertEqual(call_spec("scaled:factor=2", self.entries, 4, factor=3), (4, 3, "plain"))
        self.assertEqual(call_spec("renamed:x=7", self.entries), 7)

    def test_unknown_name(self):
        with self.assertRaises(SpecError) as ctx:
            call_spec("missing", self.entries)
        self.assertIn("renamed(x=0)", str(ctx.exception))
        self.assertIn("scaled(size, factor=1.0, label='plain') - Multiply a size.", str(ctx.exception))

    def test_bad_parameters(self):
        with self.assertRaises(SpecError):
            call_spec("scaled:sigma=2", self.entries, 4)
        with self.assertRaises(SpecError):
            call_spec("scaled", self.entries)

    def test_listing(self):
        listing = entries_to_string([scaled, original])
        self.assertEqual(listing.splitlines()[0], "scaled(size, factor=1.0, label='plain') - Multiply a size.")
        self.assertEqual(listing.splitlines()[1], "renamed(x=0) - ")


if __name__ == "__main__":
    unittest.main()
