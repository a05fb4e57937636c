# Configuration module for the RNC broadcast delay simulator
