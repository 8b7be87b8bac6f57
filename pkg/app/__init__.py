"""FourierSR Lab: FFT token mixing for super-resolution"""
