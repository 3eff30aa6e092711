"""Regression testing toolkit for ISO8583 payment switches."""
