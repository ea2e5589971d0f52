"""Federated EHR exchange: hospitals keep their records, a shared index
holds de-identified references, and every cross-hospital access requires
both a doctor token and a patient consent token."""

__version__ = "0.1.0"
