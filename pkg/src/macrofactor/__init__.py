"""Factor-model pre-treatment, common-component VARs and structural
identification of a monetary policy shock."""

__version__ = "0.1.0"
