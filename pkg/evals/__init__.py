# End-to-end evaluation: oracle, QoS and multi-seed experiments
