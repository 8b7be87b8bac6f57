"""Settings, logging and errors"""
